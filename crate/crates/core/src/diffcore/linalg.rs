//! Small dense symmetric-positive-definite routines used by the second-order
//! pruning solver.

use super::ops::Matrix;
use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    factor: Matrix,
}

impl Cholesky {
    pub fn new(a: &Matrix) -> Result<Self> {
        if a.rows != a.cols {
            return Err(Error::Dimension {
                context: "cholesky (square)".into(),
                expected: a.rows,
                actual: a.cols,
            });
        }
        let n = a.rows;
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a.get(j, j);
            for k in 0..j {
                let v = l.get(j, k);
                d -= v * v;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::numeric(format!(
                    "cholesky: matrix not positive definite at pivot {j} (d = {d:e})"
                )));
            }
            let d = d.sqrt();
            l.set(j, j, d);
            for i in (j + 1)..n {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l.get(i, k) * l.get(j, k);
                }
                l.set(i, j, s / d);
            }
        }
        Ok(Self { factor: l })
    }

    pub fn dim(&self) -> usize {
        self.factor.rows
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let l = &self.factor;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l.get(i, k) * y[k];
            }
            y[i] = s / l.get(i, i);
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= l.get(k, i) * y[k];
            }
            y[i] = s / l.get(i, i);
        }
        y
    }

    /// Full inverse; symmetrized to remove round-off asymmetry.
    pub fn inverse(&self) -> Matrix {
        let n = self.dim();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for c in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[c] = 1.0;
            let col = self.solve(&e);
            for r in 0..n {
                inv.set(r, c, col[r]);
            }
        }
        for r in 0..n {
            for c in (r + 1)..n {
                let avg = 0.5 * (inv.get(r, c) + inv.get(c, r));
                inv.set(r, c, avg);
                inv.set(c, r, avg);
            }
        }
        inv
    }
}

pub fn spd_inverse(a: &Matrix) -> Result<Matrix> {
    Ok(Cholesky::new(a)?.inverse())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_of_known_2x2() {
        let a = Matrix::from_rows(&[&[2.0, 1.0], &[1.0, 2.0]]).unwrap();
        let inv = spd_inverse(&a).unwrap();
        let expect = [2.0 / 3.0, -1.0 / 3.0, -1.0 / 3.0, 2.0 / 3.0];
        for (x, y) in inv.data.iter().zip(expect) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn solve_roundtrip() {
        let a = Matrix::from_rows(&[&[4.0, 1.0, 0.5], &[1.0, 3.0, 0.2], &[0.5, 0.2, 2.0]]).unwrap();
        let chol = Cholesky::new(&a).unwrap();
        let x = chol.solve(&[1.0, -2.0, 0.5]);
        let back = a.matvec(&x);
        for (b, e) in back.iter().zip([1.0, -2.0, 0.5]) {
            assert!((b - e).abs() < 1e-13);
        }
    }

    #[test]
    fn indefinite_is_rejected() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]).unwrap();
        assert!(matches!(Cholesky::new(&a), Err(Error::Numeric { .. })));
    }
}
