use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::diffcore::{CompiledPathway, Matrix};
use crate::error::{Error, Result};
use crate::model::{MaskSet, ModelParams};
use crate::rng;
use crate::training::{objective_upstream, Objective};

/// Block-diagonal dampened empirical Fisher `ζI + (1/m) Σ g gᵀ` over the
/// prunable index space for one concept.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherEstimate {
    pub concept: usize,
    pub block_size: usize,
    pub zeta: f64,
    pub len: usize,
    /// `blocks[b]` covers indices `b*B .. min((b+1)*B, len)`.
    pub blocks: Vec<Matrix>,
}

impl FisherEstimate {
    /// Builds the estimate from explicit per-example gradients.
    pub fn from_gradients(
        concept: usize,
        grads: &[Vec<f64>],
        len: usize,
        block_size: usize,
        zeta: f64,
    ) -> Result<Self> {
        if block_size == 0 {
            return Err(Error::config("block size must be >= 1"));
        }
        if !(zeta > 0.0) {
            return Err(Error::config(format!("dampening must be > 0, got {zeta}")));
        }
        if grads.is_empty() {
            return Err(Error::config("fisher needs at least one gradient"));
        }
        let inv_m = 1.0 / grads.len() as f64;
        let mut blocks = Vec::new();
        let mut start = 0;
        while start < len {
            let end = (start + block_size).min(len);
            let n = end - start;
            let mut f = Matrix::identity(n);
            f.data.iter_mut().for_each(|v| *v *= zeta);
            for g in grads {
                if g.len() != len {
                    return Err(Error::Dimension {
                        context: "fisher gradient".into(),
                        expected: len,
                        actual: g.len(),
                    });
                }
                let gb = &g[start..end];
                if gb.iter().any(|v| !v.is_finite()) {
                    return Err(Error::numeric(format!("fisher gradient for concept {concept}")));
                }
                f.add_outer(gb, gb, inv_m);
            }
            blocks.push(f);
            start = end;
        }
        Ok(Self {
            concept,
            block_size,
            zeta,
            len,
            blocks,
        })
    }

    pub fn block_range(&self, b: usize) -> std::ops::Range<usize> {
        let start = b * self.block_size;
        start..(start + self.block_size).min(self.len)
    }
}

/// Which loss terms feed the per-concept Fisher gradients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisherObjective {
    pub concept_weight: f64,
    /// Weight of the task CE, routed only through concept `k`'s contribution.
    pub task_weight: f64,
}

impl Default for FisherObjective {
    fn default() -> Self {
        Self {
            concept_weight: 1.0,
            task_weight: 1.0,
        }
    }
}

/// Seed-deterministic sample of `m` example indices; cycles through a
/// shuffled order when `m` exceeds the split size.
pub fn sample_indices(n: usize, m: usize, seed: u64, concept: usize, step: usize) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let stream = 1000 + (step as u64) * 64 + concept as u64;
    let order = rng::permutation(&mut rng::derived(seed, stream), n);
    (0..m).map(|i| order[i % n]).collect()
}

/// Per-example gradients of concept `k`'s branch objective with respect to
/// the prunable weights (zero at positions pruned in mask `k`).
pub fn concept_gradients(
    examples: &[&Example],
    params: &ModelParams,
    masks: &MaskSet,
    concept: usize,
    objective: FisherObjective,
) -> Result<Vec<Vec<f64>>> {
    let compiled = CompiledPathway::new(params, masks)?;
    let obj = Objective::Branch {
        concept,
        concept_weight: objective.concept_weight,
        task_weight: objective.task_weight,
    };
    examples
        .iter()
        .map(|ex| {
            let trace = compiled.forward(&ex.token_ids)?;
            let (_, up) = objective_upstream(&trace, ex, obj)?;
            let rec = compiled.backward(&trace, &up, false)?;
            Ok(rec.grads.theta.values)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn estimate_fisher(
    examples: &[&Example],
    params: &ModelParams,
    masks: &MaskSet,
    concept: usize,
    block_size: usize,
    zeta: f64,
    objective: FisherObjective,
) -> Result<FisherEstimate> {
    let grads = concept_gradients(examples, params, masks, concept, objective)?;
    FisherEstimate::from_gradients(concept, &grads, params.prunable_len(), block_size, zeta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Cholesky;

    #[test]
    fn single_gradient_block() {
        let f = FisherEstimate::from_gradients(0, &[vec![1.0, 2.0]], 2, 2, 1e-4).unwrap();
        let b = &f.blocks[0];
        assert!((b.get(0, 0) - 1.0001).abs() < 1e-15);
        assert_eq!(b.get(0, 1), 2.0);
        assert_eq!(b.get(1, 0), 2.0);
        assert!((b.get(1, 1) - 4.0001).abs() < 1e-15);
    }

    #[test]
    fn zero_gradients_give_dampening_only() {
        let f = FisherEstimate::from_gradients(1, &vec![vec![0.0; 5]; 3], 5, 2, 0.5).unwrap();
        assert_eq!(f.blocks.len(), 3);
        assert_eq!(f.blocks[2].rows, 1);
        for b in &f.blocks {
            let mut expect = Matrix::identity(b.rows);
            expect.data.iter_mut().for_each(|v| *v *= 0.5);
            assert_eq!(b, &expect);
        }
    }

    #[test]
    fn blocks_are_symmetric_and_positive_definite() {
        let grads: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..7).map(|j| ((i * 7 + j) as f64).sin()).collect())
            .collect();
        let f = FisherEstimate::from_gradients(0, &grads, 7, 3, 1e-4).unwrap();
        for (b, m) in f.blocks.iter().enumerate() {
            assert_eq!(m.rows, f.block_range(b).len());
            assert!(m.max_asymmetry() <= 1e-12);
            assert!(Cholesky::new(m).is_ok());
        }
    }

    #[test]
    fn invalid_settings() {
        assert!(FisherEstimate::from_gradients(0, &[vec![1.0]], 1, 0, 1e-4).is_err());
        assert!(FisherEstimate::from_gradients(0, &[vec![1.0]], 1, 1, 0.0).is_err());
        assert!(FisherEstimate::from_gradients(0, &[], 1, 1, 1e-4).is_err());
        assert!(FisherEstimate::from_gradients(0, &[vec![f64::NAN]], 1, 1, 1e-4).is_err());
    }

    #[test]
    fn sampling_is_deterministic_and_cycles() {
        let a = sample_indices(5, 12, 3, 0, 1);
        assert_eq!(a, sample_indices(5, 12, 3, 0, 1));
        assert_eq!(a[..5], a[5..10]);
        assert_ne!(a, sample_indices(5, 12, 3, 1, 1));
    }
}
