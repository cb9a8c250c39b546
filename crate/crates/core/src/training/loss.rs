//! Joint and per-concept (decomposed) objectives, plus the upstream gradients
//! each objective feeds into the backward pass.

use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::diffcore::{softmax_cross_entropy, softmax_cross_entropy_grad, CompiledPathway, ForwardTrace, Upstream};
use crate::error::{Error, Result};
use crate::model::{MaskSet, ModelParams};

/// How the task cross-entropy enters the decomposed objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskTerm {
    /// One task CE on the summed pathway logits.
    #[default]
    Single,
    /// One task CE per concept on that concept's contribution alone.
    PerConcept,
}

impl std::str::FromStr for TaskTerm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Self::Single),
            "per_concept" => Ok(Self::PerConcept),
            other => Err(Error::config(format!("unknown task term {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub task: f64,
    /// Unweighted concept cross-entropies, one per concept branch.
    pub concepts: Vec<f64>,
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::numeric(what.to_string()))
    }
}

/// `CE(task) + gamma * sum_k CE(concept_k)` computed the monolithic way: the
/// concept activations are concatenated and multiplied by the stacked
/// `C x (K*V)` classifier.
pub fn joint_loss(
    example: &Example,
    params: &ModelParams,
    masks: &MaskSet,
    gamma: f64,
) -> Result<f64> {
    let compiled = CompiledPathway::new(params, masks)?;
    let trace = compiled.forward(&example.token_ids)?;
    let concat: Vec<f64> = trace.activations.iter().flatten().copied().collect();
    let v = params.concept_classes();
    let c = params.task_classes();
    let mut task_logits = vec![0.0; c];
    for (row, t) in task_logits.iter_mut().enumerate() {
        for (j, a) in concat.iter().enumerate() {
            *t += params.classifier[j / v].get(row, j % v) * a;
        }
    }
    let mut total = softmax_cross_entropy(&task_logits, example.task_label)?;
    for (k, logits) in trace.concept_logits.iter().enumerate() {
        total += gamma * softmax_cross_entropy(logits, example.concept_labels[k])?;
    }
    finite(total, "joint loss")
}

/// Per-concept objective: each concept's CE is read from its own masked
/// branch; the task CE is taken once on the pathway output (or per concept
/// with [`TaskTerm::PerConcept`]).
pub fn decomposed_joint_loss(
    example: &Example,
    params: &ModelParams,
    masks: &MaskSet,
    gamma: f64,
    task_term: TaskTerm,
) -> Result<LossBreakdown> {
    let compiled = CompiledPathway::new(params, masks)?;
    let trace = compiled.forward(&example.token_ids)?;
    breakdown(&trace, example, gamma, task_term)
}

pub fn breakdown(
    trace: &ForwardTrace,
    example: &Example,
    gamma: f64,
    task_term: TaskTerm,
) -> Result<LossBreakdown> {
    let task = match task_term {
        TaskTerm::Single => softmax_cross_entropy(&trace.task_logits, example.task_label)?,
        TaskTerm::PerConcept => trace
            .contributions
            .iter()
            .map(|c| softmax_cross_entropy(c, example.task_label))
            .sum::<Result<f64>>()?,
    };
    let concepts = trace
        .concept_logits
        .iter()
        .zip(&example.concept_labels)
        .map(|(l, &y)| softmax_cross_entropy(l, y))
        .collect::<Result<Vec<f64>>>()?;
    let total = task + gamma * concepts.iter().sum::<f64>();
    finite(total, "decomposed joint loss")?;
    Ok(LossBreakdown {
        total,
        task,
        concepts,
    })
}

/// What a backward pass differentiates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// `task + gamma * sum_k concept_k`.
    Joint { gamma: f64, task_term: TaskTerm },
    /// `sum_k concept_k` only (first stage of independent / sequential).
    Concepts,
    /// Task CE through the direct head (vanilla baseline).
    Head,
    /// Terms attributable to one concept branch: `concept_weight * CE_k`
    /// plus `task_weight * CE(task)` with the task gradient routed only
    /// through concept `k`'s contribution.
    Branch {
        concept: usize,
        concept_weight: f64,
        task_weight: f64,
    },
}

/// Loss value and the upstream gradients for `objective`.
pub fn objective_upstream(
    trace: &ForwardTrace,
    example: &Example,
    objective: Objective,
) -> Result<(f64, Upstream)> {
    let k = trace.concept_logits.len();
    let mut up = Upstream::empty(k);
    let loss = match objective {
        Objective::Joint { gamma, task_term } => {
            let mut loss = 0.0;
            match task_term {
                TaskTerm::Single => {
                    let (l, d) = softmax_cross_entropy_grad(&trace.task_logits, example.task_label)?;
                    loss += l;
                    up.contributions = vec![Some(d); k];
                }
                TaskTerm::PerConcept => {
                    for (c, contrib) in trace.contributions.iter().enumerate() {
                        let (l, d) = softmax_cross_entropy_grad(contrib, example.task_label)?;
                        loss += l;
                        up.contributions[c] = Some(d);
                    }
                }
            }
            if gamma != 0.0 {
                for (c, logits) in trace.concept_logits.iter().enumerate() {
                    let (l, mut d) = softmax_cross_entropy_grad(logits, example.concept_labels[c])?;
                    loss += gamma * l;
                    d.iter_mut().for_each(|x| *x *= gamma);
                    up.concept_logits[c] = Some(d);
                }
            }
            loss
        }
        Objective::Concepts => {
            let mut loss = 0.0;
            for (c, logits) in trace.concept_logits.iter().enumerate() {
                let (l, d) = softmax_cross_entropy_grad(logits, example.concept_labels[c])?;
                loss += l;
                up.concept_logits[c] = Some(d);
            }
            loss
        }
        Objective::Head => {
            let logits = trace
                .head_logits
                .as_ref()
                .ok_or_else(|| Error::config("head objective on a model without a direct head"))?;
            let (l, d) = softmax_cross_entropy_grad(logits, example.task_label)?;
            up.head = Some(d);
            l
        }
        Objective::Branch {
            concept,
            concept_weight,
            task_weight,
        } => {
            if concept >= k {
                return Err(Error::config(format!("concept {concept} outside 0..{k}")));
            }
            let mut loss = 0.0;
            if concept_weight != 0.0 {
                let (l, mut d) =
                    softmax_cross_entropy_grad(&trace.concept_logits[concept], example.concept_labels[concept])?;
                loss += concept_weight * l;
                d.iter_mut().for_each(|x| *x *= concept_weight);
                up.concept_logits[concept] = Some(d);
            }
            if task_weight != 0.0 {
                let (l, mut d) = softmax_cross_entropy_grad(&trace.task_logits, example.task_label)?;
                loss += task_weight * l;
                d.iter_mut().for_each(|x| *x *= task_weight);
                up.contributions[concept] = Some(d);
            }
            loss
        }
    };
    Ok((finite(loss, "objective")?, up))
}
