use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                context: format!("{rows}x{cols} matrix"),
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Dimension {
                    context: "matrix row".into(),
                    expected: cols,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self · x`
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `selfᵀ · y`
    pub fn matvec_t(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.row(r)) {
                *o += w * yr;
            }
        }
        out
    }

    /// Adds `scale · u vᵀ` in place.
    pub fn add_outer(&mut self, u: &[f64], v: &[f64], scale: f64) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (r, &ur) in u.iter().enumerate() {
            let s = scale * ur;
            if s == 0.0 {
                continue;
            }
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (o, &vc) in row.iter_mut().zip(v) {
                *o += s * vc;
            }
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        out
    }

    /// Submatrix on the given row and column index sets.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(rows.len(), cols.len());
        for (i, &r) in rows.iter().enumerate() {
            for (j, &c) in cols.iter().enumerate() {
                out.data[i * cols.len() + j] = self.get(r, c);
            }
        }
        out
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.rows {
            for c in (r + 1)..self.cols {
                worst = worst.max((self.get(r, c) - self.get(c, r)).abs());
            }
        }
        worst
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `weights · input + bias`.
pub fn affine(weights: &Matrix, bias: &[f64], input: &[f64]) -> Result<Vec<f64>> {
    if input.len() != weights.cols {
        return Err(Error::Dimension {
            context: "affine input".into(),
            expected: weights.cols,
            actual: input.len(),
        });
    }
    if bias.len() != weights.rows {
        return Err(Error::Dimension {
            context: "affine bias".into(),
            expected: weights.rows,
            actual: bias.len(),
        });
    }
    let mut out = weights.matvec(input);
    for (o, b) in out.iter_mut().zip(bias) {
        *o += b;
    }
    Ok(out)
}

/// Logistic function, evaluated on the branch that cannot overflow.
#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| sigmoid_scalar(x)).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// `-log softmax(logits)[label]`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::Dimension {
            context: "cross-entropy label".into(),
            expected: logits.len(),
            actual: label,
        });
    }
    Ok(-log_softmax(logits)[label])
}

/// Cross-entropy together with its gradient `softmax(logits) - onehot(label)`.
pub fn softmax_cross_entropy_grad(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::Dimension {
            context: "cross-entropy label".into(),
            expected: logits.len(),
            actual: label,
        });
    }
    let ls = log_softmax(logits);
    let loss = -ls[label];
    let mut grad: Vec<f64> = ls.iter().map(|l| l.exp()).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_cases() {
        let id = Matrix::identity(2);
        assert_eq!(affine(&id, &[0.0, 0.0], &[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
        let z = Matrix::zeros(1, 4);
        assert_eq!(affine(&z, &[3.0], &[9.0, -1.0, 2.0, 5.0]).unwrap(), vec![3.0]);
        let w = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        assert_eq!(affine(&w, &[0.0, 0.0], &[1.0, 1.0]).unwrap(), vec![3.0, 7.0]);
        assert!(matches!(
            affine(&w, &[0.0, 0.0], &[1.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        let x = 2.5;
        assert!((sigmoid_scalar(-x) - (1.0 - sigmoid_scalar(x))).abs() < 1e-15);
        assert!((sigmoid_scalar(3f64.ln()) - 0.75).abs() < 1e-15);
        assert_eq!(sigmoid_scalar(-709.0).is_finite(), true);
        assert!(sigmoid_scalar(-709.0) > 0.0);
        assert_eq!(sigmoid_scalar(709.0), 1.0);
    }

    #[test]
    fn cross_entropy_values() {
        let uniform = [0.3; 5];
        for y in 0..5 {
            let l = softmax_cross_entropy(&uniform, y).unwrap();
            assert!((l - 5f64.ln()).abs() < 1e-12);
        }
        assert!(softmax_cross_entropy(&[1000.0, 0.0], 0).unwrap() < 1e-300);
        // -log(e^3 / (e + e^2 + e^3))
        let direct = -(3f64.exp() / (1f64.exp() + 2f64.exp() + 3f64.exp())).ln();
        let l = softmax_cross_entropy(&[1.0, 2.0, 3.0], 2).unwrap();
        assert!((l - direct).abs() < 1e-14);
        assert!((l - 0.40761).abs() < 1e-5);
        assert!(softmax_cross_entropy(&[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn argmax_ties_to_lowest() {
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[0.0, 2.0, 2.0]), 1);
        assert_eq!(argmax(&[-1.0, -3.0, 5.0]), 2);
    }

    proptest::proptest! {
        #[test]
        fn cross_entropy_shift_invariant(
            logits in proptest::collection::vec(-20.0f64..20.0, 2..8),
            shift in -50.0f64..50.0,
            label_seed in 0usize..100,
        ) {
            let label = label_seed % logits.len();
            let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
            let a = softmax_cross_entropy(&logits, label).unwrap();
            let b = softmax_cross_entropy(&shifted, label).unwrap();
            proptest::prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
