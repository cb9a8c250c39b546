use crate::error::{Error, Result};

/// Binary selector over the prunable index space. `true` keeps the weight.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    bits: Vec<bool>,
}

impl Mask {
    pub fn ones(len: usize) -> Self {
        Self {
            bits: vec![true; len],
        }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            bits: vec![false; len],
        }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, keep: bool) {
        self.bits[i] = keep;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn pruned_count(&self) -> usize {
        self.len() - self.popcount()
    }

    /// Fraction of cleared bits.
    pub fn sparsity(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.pruned_count() as f64 / self.len() as f64
        }
    }

    pub fn kept_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    pub fn pruned_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| !b).map(|(i, _)| i)
    }

    /// Packs bits LSB-first: flat index `i` is bit `i % 8` of byte `i / 8`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.bits.len().div_ceil(8)];
        for (i, &b) in self.bits.iter().enumerate() {
            if b {
                out[i / 8] |= 1 << (i % 8);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], len: usize) -> Result<Self> {
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::data(format!(
                "mask of {len} bits needs {} bytes, found {}",
                len.div_ceil(8),
                bytes.len()
            )));
        }
        let bits = (0..len).map(|i| bytes[i / 8] & (1 << (i % 8)) != 0).collect();
        Ok(Self { bits })
    }
}

/// One mask per concept, all over the same prunable space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSet {
    masks: Vec<Mask>,
}

impl MaskSet {
    pub fn all_ones(num_concepts: usize, len: usize) -> Self {
        Self {
            masks: vec![Mask::ones(len); num_concepts],
        }
    }

    pub fn new(masks: Vec<Mask>) -> Result<Self> {
        if let Some(first) = masks.first() {
            if let Some(bad) = masks.iter().find(|m| m.len() != first.len()) {
                return Err(Error::Dimension {
                    context: "mask length".into(),
                    expected: first.len(),
                    actual: bad.len(),
                });
            }
        }
        Ok(Self { masks })
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn mask_len(&self) -> usize {
        self.masks.first().map_or(0, Mask::len)
    }

    pub fn get(&self, k: usize) -> &Mask {
        &self.masks[k]
    }

    pub fn get_mut(&mut self, k: usize) -> &mut Mask {
        &mut self.masks[k]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Mask> {
        self.masks.iter()
    }

    pub fn sparsity(&self) -> Vec<f64> {
        self.masks.iter().map(Mask::sparsity).collect()
    }

    pub fn all_identical(&self) -> bool {
        self.masks.windows(2).all(|w| w[0] == w[1])
    }

    /// Indices kept by at least one concept.
    pub fn union(&self) -> Mask {
        let len = self.mask_len();
        Mask::from_bits(
            (0..len)
                .map(|i| self.masks.iter().any(|m| m.get(i)))
                .collect(),
        )
    }
}
