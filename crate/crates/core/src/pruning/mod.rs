//! Concept-induced sparsity mining.
//!
//! For every concept the prunable encoder weights are scored with a
//! second-order (optimal brain surgeon) estimate of the loss increase under a
//! block-diagonal dampened empirical Fisher, and the lowest-scoring weights
//! are cleared from that concept's mask. Pruning runs over `P` steps with a
//! linear sparsity schedule; after each step the model is fine-tuned on the
//! decomposed objective through the new masks.

mod fisher;
mod obs;

use serde::{Deserialize, Serialize};

pub use fisher::{
    concept_gradients, estimate_fisher, sample_indices, FisherEstimate, FisherObjective,
};
pub use obs::{obs_score, obs_solve_inverse, obs_update, singleton_score, ObsSolution};

use crate::data::Example;
use crate::diffcore::{spd_inverse, CompiledPathway};
use crate::error::{Error, Result};
use crate::model::{MaskSet, ModelParams};
use crate::training::{self, breakdown, Strategy, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Compensation {
    /// Only mask bits change.
    #[default]
    None,
    /// The OBS update is accumulated into a per-concept delta that only that
    /// concept's encoder pass sees.
    PerConceptDelta,
}

impl std::str::FromStr for Compensation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "per_concept_delta" => Ok(Self::PerConceptDelta),
            other => Err(Error::config(format!("unknown compensation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    pub target_sparsity: f64,
    pub steps: usize,
    pub finetune_epochs_per_step: usize,
    pub block_size: usize,
    pub zeta: f64,
    pub fisher_samples: usize,
    pub group_size: usize,
    pub compensation: Compensation,
    pub fisher_objective: FisherObjective,
    pub seed: u64,
}

impl PruneConfig {
    /// Defaults with `s = 1 - 1/K`.
    pub fn for_concepts(num_concepts: usize) -> Self {
        Self {
            target_sparsity: 1.0 - 1.0 / num_concepts.max(1) as f64,
            steps: 4,
            finetune_epochs_per_step: 1,
            block_size: 64,
            zeta: 1e-4,
            fisher_samples: 128,
            group_size: 1,
            compensation: Compensation::None,
            fisher_objective: FisherObjective::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.target_sparsity) {
            return Err(Error::config(format!(
                "target sparsity must lie in [0, 1), got {}",
                self.target_sparsity
            )));
        }
        if self.steps == 0 {
            return Err(Error::config("steps must be >= 1"));
        }
        if self.block_size == 0 {
            return Err(Error::config("block size must be >= 1"));
        }
        if !(self.zeta > 0.0) {
            return Err(Error::config(format!("zeta must be > 0, got {}", self.zeta)));
        }
        if self.fisher_samples == 0 {
            return Err(Error::config("fisher samples must be >= 1"));
        }
        if self.group_size == 0 {
            return Err(Error::config("group size must be >= 1"));
        }
        Ok(())
    }

    /// Sparsity scheduled after step `p` (1-based).
    pub fn scheduled(&self, p: usize) -> f64 {
        self.target_sparsity * p as f64 / self.steps as f64
    }
}

/// Number of weights that must be pruned to reach `sparsity` over `len`.
/// A tiny tolerance keeps values like `0.75 * 3 / 4 * L` from rounding up
/// through floating-point noise.
pub fn pruned_target(sparsity: f64, len: usize) -> usize {
    let exact = sparsity * len as f64;
    ((exact - 1e-9 * exact.abs().max(1.0)).ceil().max(0.0) as usize).min(len)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoSummary {
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

impl RhoSummary {
    fn of(values: &mut [f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        values.sort_by(f64::total_cmp);
        Some(Self {
            min: values[0],
            median: values[values.len() / 2],
            max: values[values.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub concept: usize,
    pub scheduled_sparsity: f64,
    pub achieved_sparsity: f64,
    pub pruned: usize,
    /// Scores of the weights pruned in this step.
    pub rho: Option<RhoSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptStepReport {
    #[serde(flatten)]
    pub outcome: StepOutcome,
    /// Mean decomposed loss on the Fisher sample before and after this
    /// concept's mask changed.
    pub loss_before: f64,
    pub loss_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    pub concepts: Vec<ConceptStepReport>,
    /// Mean training loss of the fine-tuning epochs (empty when skipped).
    pub finetune_losses: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub prunable_len: usize,
    pub steps: Vec<StepReport>,
    pub final_sparsity: Vec<f64>,
}

impl PruneReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

struct Candidate {
    rho: f64,
    /// Global prunable indices.
    members: Vec<usize>,
}

/// Prunes mask `concept` up to `target` sparsity using `fisher`.
///
/// Exactly `ceil(target * L)` minus the already pruned count are cleared. With
/// [`Compensation::PerConceptDelta`] the joint OBS update of every touched
/// block is added to the concept's compensation vector.
pub fn prune_step(
    params: &mut ModelParams,
    masks: &mut MaskSet,
    concept: usize,
    target: f64,
    fisher: &FisherEstimate,
    cfg: &PruneConfig,
) -> Result<StepOutcome> {
    let len = params.prunable_len();
    if concept >= masks.len() {
        return Err(Error::config(format!("concept {concept} outside 0..{}", masks.len())));
    }
    if fisher.len != len {
        return Err(Error::Dimension {
            context: "fisher length".into(),
            expected: len,
            actual: fisher.len,
        });
    }
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::config(format!("step target {target} outside [0, 1]")));
    }
    let mask = masks.get(concept);
    let already = mask.pruned_count();
    let wanted = pruned_target(target, len);
    if wanted < already {
        return Err(Error::config(format!(
            "step target {target} is below the current sparsity of concept {concept}"
        )));
    }
    let count = wanted - already;
    if count > mask.popcount() || (count > 0 && wanted == len) {
        return Err(Error::config(format!(
            "target {target} would prune every weight of concept {concept}"
        )));
    }
    let mut outcome = StepOutcome {
        concept,
        scheduled_sparsity: target,
        achieved_sparsity: mask.sparsity(),
        pruned: 0,
        rho: None,
    };
    if count == 0 {
        return Ok(outcome);
    }

    let theta: Vec<f64> = match params.compensation.get(concept) {
        Some(d) => params.theta.values.iter().zip(d).map(|(t, d)| t + d).collect(),
        None => params.theta.values.clone(),
    };

    // Score candidate groups block by block over the still-active indices.
    let mut inverses = Vec::with_capacity(fisher.blocks.len());
    let mut candidates = Vec::new();
    for (b, block) in fisher.blocks.iter().enumerate() {
        let range = fisher.block_range(b);
        let active: Vec<usize> = range.clone().filter(|&i| mask.get(i)).collect();
        if active.is_empty() {
            inverses.push(None);
            continue;
        }
        let local: Vec<usize> = active.iter().map(|&i| i - range.start).collect();
        let finv = spd_inverse(&block.select(&local, &local))?;
        let theta_a: Vec<f64> = active.iter().map(|&i| theta[i]).collect();
        if cfg.group_size == 1 {
            for (j, &i) in active.iter().enumerate() {
                candidates.push(Candidate {
                    rho: singleton_score(theta_a[j], finv.get(j, j)),
                    members: vec![i],
                });
            }
        } else {
            for (c, chunk) in active.chunks(cfg.group_size).enumerate() {
                let q: Vec<usize> = (0..chunk.len()).map(|j| c * cfg.group_size + j).collect();
                candidates.push(Candidate {
                    rho: obs_solve_inverse(&q, &theta_a, &finv)?.rho,
                    members: chunk.to_vec(),
                });
            }
        }
        inverses.push(Some((active, finv, theta_a)));
    }
    if candidates.iter().any(|c| !c.rho.is_finite()) {
        return Err(Error::numeric(format!("obs score for concept {concept}")));
    }
    candidates.sort_by(|a, b| a.rho.total_cmp(&b.rho).then(a.members[0].cmp(&b.members[0])));

    // Whole groups first; a group that would overshoot the exact count is
    // skipped and the remainder is filled with its lowest-index members.
    let mut selected: Vec<(usize, f64)> = Vec::with_capacity(count);
    let mut remaining = count;
    let mut leftovers = Vec::new();
    for cand in &candidates {
        if remaining == 0 {
            break;
        }
        if cand.members.len() <= remaining {
            remaining -= cand.members.len();
            selected.extend(cand.members.iter().map(|&i| (i, cand.rho)));
        } else {
            leftovers.push(cand);
        }
    }
    for cand in leftovers {
        for &i in &cand.members {
            if remaining == 0 {
                break;
            }
            selected.push((i, cand.rho));
            remaining -= 1;
        }
    }
    debug_assert_eq!(remaining, 0);

    if cfg.compensation == Compensation::PerConceptDelta {
        if params.compensation.is_empty() {
            params.compensation = vec![vec![0.0; len]; masks.len()];
        }
        let mut by_block: Vec<Vec<usize>> = vec![Vec::new(); fisher.blocks.len()];
        for &(i, _) in &selected {
            by_block[i / fisher.block_size].push(i);
        }
        for (b, idx) in by_block.iter().enumerate() {
            if idx.is_empty() {
                continue;
            }
            let (active, finv, theta_a) = inverses[b].as_ref().expect("block has candidates");
            let q: Vec<usize> = idx
                .iter()
                .map(|i| active.binary_search(i).expect("selected index is active"))
                .collect();
            let sol = obs_solve_inverse(&q, theta_a, finv)?;
            let delta = &mut params.compensation[concept];
            for (j, &i) in active.iter().enumerate() {
                delta[i] += sol.delta[j];
            }
        }
    }

    let mask = masks.get_mut(concept);
    for &(i, _) in &selected {
        mask.set(i, false);
    }
    let mut rhos: Vec<f64> = selected.iter().map(|&(_, r)| r).collect();
    outcome.pruned = selected.len();
    outcome.achieved_sparsity = mask.sparsity();
    outcome.rho = RhoSummary::of(&mut rhos);
    Ok(outcome)
}

fn mean_loss(
    examples: &[&Example],
    params: &ModelParams,
    masks: &MaskSet,
    gamma: f64,
    task_term: training::TaskTerm,
) -> Result<f64> {
    let compiled = CompiledPathway::new(params, masks)?;
    let mut total = 0.0;
    for ex in examples {
        let trace = compiled.forward(&ex.token_ids)?;
        total += breakdown(&trace, ex, gamma, task_term)?.total;
    }
    Ok(total / examples.len().max(1) as f64)
}

/// Iterative pruning of every concept mask to `cfg.target_sparsity`,
/// fine-tuning on the decomposed objective after each step. `finetune`
/// supplies the optimizer settings; its strategy and epoch count are
/// overridden.
pub fn prune_to_sparsity(
    train_set: &[Example],
    params: &mut ModelParams,
    masks: &mut MaskSet,
    cfg: &PruneConfig,
    finetune: &TrainConfig,
) -> Result<PruneReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::config("pruning needs a nonempty training split"));
    }
    if masks.len() != params.num_concepts() {
        return Err(Error::Dimension {
            context: "mask count".into(),
            expected: params.num_concepts(),
            actual: masks.len(),
        });
    }
    let mut ft = finetune.clone();
    ft.strategy = Strategy::Joint;
    ft.epochs = cfg.finetune_epochs_per_step;
    let mut report = PruneReport {
        prunable_len: params.prunable_len(),
        ..PruneReport::default()
    };
    for p in 1..=cfg.steps {
        let target = cfg.scheduled(p);
        let mut step = StepReport {
            step: p,
            concepts: Vec::new(),
            finetune_losses: Vec::new(),
        };
        for k in 0..masks.len() {
            let sample: Vec<&Example> = sample_indices(train_set.len(), cfg.fisher_samples, cfg.seed, k, p)
                .into_iter()
                .map(|i| &train_set[i])
                .collect();
            let fisher = estimate_fisher(
                &sample,
                params,
                masks,
                k,
                cfg.block_size,
                cfg.zeta,
                cfg.fisher_objective,
            )?;
            let before = mean_loss(&sample, params, masks, ft.gamma, ft.task_term)?;
            let outcome = prune_step(params, masks, k, target, &fisher, cfg)?;
            let after = mean_loss(&sample, params, masks, ft.gamma, ft.task_term)?;
            step.concepts.push(ConceptStepReport {
                outcome,
                loss_before: before,
                loss_after: after,
            });
        }
        let changed = step.concepts.iter().any(|c| c.outcome.pruned > 0);
        if changed && ft.epochs > 0 {
            ft.seed = finetune.seed.wrapping_add(p as u64);
            let log = training::train(train_set, None, &ft, params, masks)?;
            step.finetune_losses = log.epochs.iter().map(|e| e.train_loss).collect();
        }
        report.steps.push(step);
    }
    report.final_sparsity = masks.sparsity();
    Ok(report)
}

#[cfg(test)]
mod tests;
