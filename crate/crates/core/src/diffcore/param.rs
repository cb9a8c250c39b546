use serde::{Deserialize, Serialize};

use super::ops::Matrix;
use crate::error::{Error, Result};

/// Placement of one weight matrix inside a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl BlockInfo {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat parameter storage with a fixed map from flat index to
/// (block, row, col). Blocks are row-major and laid out back to back; the
/// order never changes after construction because masks are stored against it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub values: Vec<f64>,
    blocks: Vec<BlockInfo>,
}

impl ParamVector {
    /// Zero-initialised vector with blocks of the given `(name, rows, cols)`.
    pub fn zeros(shapes: &[(String, usize, usize)]) -> Self {
        let mut blocks = Vec::with_capacity(shapes.len());
        let mut offset = 0;
        for (name, rows, cols) in shapes {
            blocks.push(BlockInfo {
                name: name.clone(),
                offset,
                rows: *rows,
                cols: *cols,
            });
            offset += rows * cols;
        }
        Self {
            values: vec![0.0; offset],
            blocks,
        }
    }

    pub fn from_parts(values: Vec<f64>, blocks: Vec<BlockInfo>) -> Result<Self> {
        let pv = Self { values, blocks };
        pv.validate()?;
        Ok(pv)
    }

    pub fn validate(&self) -> Result<()> {
        let mut expected = 0;
        for b in &self.blocks {
            if b.offset != expected {
                return Err(Error::data(format!(
                    "block {} starts at {} but previous blocks end at {}",
                    b.name, b.offset, expected
                )));
            }
            expected += b.len();
        }
        if expected != self.values.len() {
            return Err(Error::Dimension {
                context: "parameter vector length".into(),
                expected,
                actual: self.values.len(),
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn blocks(&self) -> &[BlockInfo] {
        &self.blocks
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.values[self.blocks[i].range()]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut [f64] {
        let r = self.blocks[i].range();
        &mut self.values[r]
    }

    pub fn block_matrix(&self, i: usize) -> Matrix {
        let b = &self.blocks[i];
        Matrix {
            rows: b.rows,
            cols: b.cols,
            data: self.block(i).to_vec(),
        }
    }

    /// Maps a flat index to `(block, row, col)`.
    pub fn locate(&self, index: usize) -> Option<(usize, usize, usize)> {
        self.blocks.iter().enumerate().find_map(|(bi, b)| {
            b.range().contains(&index).then(|| {
                let local = index - b.offset;
                (bi, local / b.cols, local % b.cols)
            })
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            values: vec![0.0; self.values.len()],
            blocks: self.blocks.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_contiguous() {
        let pv = ParamVector::zeros(&[("a".into(), 2, 3), ("b".into(), 4, 1)]);
        assert_eq!(pv.len(), 10);
        assert_eq!(pv.blocks()[1].offset, 6);
        assert_eq!(pv.locate(7), Some((1, 1, 0)));
        assert_eq!(pv.locate(5), Some((0, 1, 2)));
        assert_eq!(pv.locate(10), None);
    }

    #[test]
    fn overlapping_blocks_rejected() {
        let blocks = vec![
            BlockInfo { name: "a".into(), offset: 0, rows: 2, cols: 2 },
            BlockInfo { name: "b".into(), offset: 3, rows: 1, cols: 1 },
        ];
        assert!(ParamVector::from_parts(vec![0.0; 5], blocks).is_err());
    }
}
