//! Closed-form optimal brain surgeon solve for one Fisher block.
//!
//! For a group `Q` of coordinates inside a block with inverse Fisher `F⁻¹`:
//!
//! ```text
//! rho_Q   = ½ θ_Qᵀ (F⁻¹_QQ)⁻¹ θ_Q
//! Δθ*     = −F⁻¹[:, Q] (F⁻¹_QQ)⁻¹ θ_Q
//! ```

use crate::diffcore::{spd_inverse, Cholesky, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ObsSolution {
    pub rho: f64,
    /// Update over the whole block; zeroes `θ_Q` exactly.
    pub delta: Vec<f64>,
}

fn check(q: &[usize], theta: &[f64], n: usize) -> Result<()> {
    if theta.len() != n {
        return Err(Error::Dimension {
            context: "obs block".into(),
            expected: n,
            actual: theta.len(),
        });
    }
    if q.is_empty() {
        return Err(Error::config("empty prune group"));
    }
    if let Some(&bad) = q.iter().find(|&&i| i >= n) {
        return Err(Error::config(format!("group index {bad} outside block of {n}")));
    }
    let mut sorted = q.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::config("duplicate index in prune group"));
    }
    Ok(())
}

/// Solves for `Q` given the already inverted block `finv`.
pub fn obs_solve_inverse(q: &[usize], theta: &[f64], finv: &Matrix) -> Result<ObsSolution> {
    check(q, theta, finv.rows)?;
    let s = finv.select(q, q);
    let theta_q: Vec<f64> = q.iter().map(|&i| theta[i]).collect();
    let y = Cholesky::new(&s)?.solve(&theta_q);
    let rho = 0.5 * theta_q.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>();
    let mut delta = vec![0.0; theta.len()];
    for (r, d) in delta.iter_mut().enumerate() {
        *d = -q.iter().zip(&y).map(|(&j, yj)| finv.get(r, j) * yj).sum::<f64>();
    }
    // The constrained coordinates land exactly on zero.
    for &i in q {
        delta[i] = -theta[i];
    }
    Ok(ObsSolution { rho, delta })
}

/// Loss-increase estimate for pruning exactly `q` with optimal compensation.
pub fn obs_score(q: &[usize], theta: &[f64], fisher: &Matrix) -> Result<f64> {
    Ok(obs_solve_inverse(q, theta, &spd_inverse(fisher)?)?.rho)
}

/// Compensating update for pruning `q`.
pub fn obs_update(q: &[usize], theta: &[f64], fisher: &Matrix) -> Result<Vec<f64>> {
    Ok(obs_solve_inverse(q, theta, &spd_inverse(fisher)?)?.delta)
}

/// Singleton score `θ_i² / (2 [F⁻¹]_ii)`.
pub fn singleton_score(theta_i: f64, finv_ii: f64) -> f64 {
    theta_i * theta_i / (2.0 * finv_ii)
}
