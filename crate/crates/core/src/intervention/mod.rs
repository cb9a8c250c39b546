//! Test-time intervention.
//!
//! Two modes: the oracle mode replaces a concept's activation row with the
//! one-hot vector of the corrected class and reclassifies; the sparsity mode
//! keeps every weight frozen and edits only the mispredicted concept's mask,
//! dropping the least salient kept weights and growing the most salient
//! pruned ones.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::diffcore::{argmax, softmax_cross_entropy_grad, CompiledPathway, ForwardTrace, Upstream};
use crate::error::{Error, Result};
use crate::model::{Mask, MaskSet, ModelParams, Prediction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionMode {
    Oracle,
    #[default]
    Sparsity,
}

impl std::str::FromStr for InterventionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Self::Oracle),
            "sparsity" => Ok(Self::Sparsity),
            other => Err(Error::config(format!("unknown intervention mode {other:?}"))),
        }
    }
}

/// How drop/grow candidates are ranked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwapRule {
    /// Drop the lowest `|g·θ|`, grow the highest `|g·θ|`.
    #[default]
    Magnitude,
    /// First-order loss change: drop kept weights whose removal raises the
    /// loss least (`-g·θ` ascending), grow pruned weights whose addition
    /// lowers it most (`g·θ` ascending).
    Signed,
}

impl std::str::FromStr for SwapRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "magnitude" => Ok(Self::Magnitude),
            "signed" => Ok(Self::Signed),
            other => Err(Error::config(format!("unknown swap rule {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionConfig {
    /// Fraction of the prunable space swapped per drop/grow round.
    pub r: f64,
    pub mode: InterventionMode,
    /// Maximum drop/grow rounds per mispredicted concept.
    pub rounds: usize,
    pub rule: SwapRule,
    /// Undo a round that does not lower the concept's cross-entropy on the
    /// example.
    pub accept_if_improved: bool,
}

impl Default for InterventionConfig {
    fn default() -> Self {
        Self {
            r: 0.01,
            mode: InterventionMode::Sparsity,
            rounds: 1,
            rule: SwapRule::Magnitude,
            accept_if_improved: false,
        }
    }
}

impl InterventionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.r) {
            return Err(Error::config(format!("r must lie in [0, 1], got {}", self.r)));
        }
        Ok(())
    }
}

/// Task logits and class after overriding concept activations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleOutcome {
    pub activations: Vec<Vec<f64>>,
    pub task_logits: Vec<f64>,
    pub task: usize,
}

/// Replaces `a_k` by the one-hot vector of `corrections[k]` and recomputes
/// `sum_k phi_k · a_k`. The encoder is not touched.
pub fn oracle_intervene(
    trace: &ForwardTrace,
    corrections: &BTreeMap<usize, usize>,
    params: &ModelParams,
) -> Result<OracleOutcome> {
    let k = params.num_concepts();
    let v = params.concept_classes();
    let mut activations = trace.activations.clone();
    for (&concept, &class) in corrections {
        if concept >= k || class >= v {
            return Err(Error::config(format!(
                "correction {concept}={class} outside {k} concepts x {v} classes"
            )));
        }
        activations[concept] = (0..v).map(|j| if j == class { 1.0 } else { 0.0 }).collect();
    }
    let mut task_logits = vec![0.0; params.task_classes()];
    for (phi, a) in params.classifier.iter().zip(&activations) {
        for (t, x) in task_logits.iter_mut().zip(phi.matvec(a)) {
            *t += x;
        }
    }
    let task = argmax(&task_logits);
    Ok(OracleOutcome {
        activations,
        task_logits,
        task,
    })
}

/// `S_i = |dCE_k/dw_i · θ_i|` over the whole prunable space, where the
/// gradient is taken with respect to concept `k`'s effective weights before
/// masking. `label` is the concept class the loss is measured against.
pub fn saliency_scores(
    example: &Example,
    concept: usize,
    label: usize,
    params: &ModelParams,
    masks: &MaskSet,
) -> Result<Vec<f64>> {
    Ok(gradient_weight_products(example, concept, label, params, masks)?
        .into_iter()
        .map(f64::abs)
        .collect())
}

/// Signed `dCE_k/dw_i · θ_i`, the first-order loss change from adding
/// weight `i` to an empty slot.
pub fn gradient_weight_products(
    example: &Example,
    concept: usize,
    label: usize,
    params: &ModelParams,
    masks: &MaskSet,
) -> Result<Vec<f64>> {
    let compiled = CompiledPathway::new(params, masks)?;
    let trace = compiled.forward(&example.token_ids)?;
    if concept >= params.num_concepts() {
        return Err(Error::config(format!("concept {concept} outside the model")));
    }
    let (_, d) = softmax_cross_entropy_grad(&trace.concept_logits[concept], label)?;
    let mut up = Upstream::empty(params.num_concepts());
    up.concept_logits[concept] = Some(d);
    let rec = compiled.backward(&trace, &up, true)?;
    let raw = rec.raw_for_concept(concept).expect("raw gradients requested");
    let delta = params.compensation.get(concept);
    Ok(raw
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let w = params.theta.values[i] + delta.map_or(0.0, |d| d[i]);
            g * w
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropGrowOutcome {
    pub dropped: Vec<usize>,
    pub grown: Vec<usize>,
    /// Requested swap count before clamping to the available candidates.
    pub requested: usize,
    pub clamped: bool,
}

/// Number of weights swapped per round for fraction `r` of `len`.
pub fn swap_count(r: f64, len: usize) -> usize {
    (r * len as f64).round() as usize
}

/// Clears the `round(r·L)` kept bits with the lowest score and sets the same
/// number of pruned bits with the highest score. Ties go to the lowest index.
/// When either side has too few candidates both sides are clamped to the
/// smaller count so the popcount never changes.
pub fn drop_grow(mask: &mut Mask, scores: &[f64], r: f64) -> Result<DropGrowOutcome> {
    swap(mask, scores, scores, r)
}

/// Drop/grow with separate keys: kept bits with the lowest `drop_key` are
/// cleared, pruned bits with the highest `grow_key` are set.
pub fn swap(mask: &mut Mask, drop_key: &[f64], grow_key: &[f64], r: f64) -> Result<DropGrowOutcome> {
    let scores = drop_key;
    if scores.len() != mask.len() || grow_key.len() != mask.len() {
        return Err(Error::Dimension {
            context: "saliency scores".into(),
            expected: mask.len(),
            actual: scores.len(),
        });
    }
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::config(format!("r must lie in [0, 1], got {r}")));
    }
    let requested = swap_count(r, mask.len());
    let mut kept: Vec<usize> = mask.kept_indices().collect();
    let mut pruned: Vec<usize> = mask.pruned_indices().collect();
    let n = requested.min(kept.len()).min(pruned.len());
    kept.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    pruned.sort_by(|&a, &b| grow_key[b].total_cmp(&grow_key[a]).then(a.cmp(&b)));
    let dropped = kept[..n].to_vec();
    let grown = pruned[..n].to_vec();
    for &i in &dropped {
        mask.set(i, false);
    }
    for &i in &grown {
        mask.set(i, true);
    }
    Ok(DropGrowOutcome {
        dropped,
        grown,
        requested,
        clamped: n < requested,
    })
}

/// One logged drop/grow edit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionEvent {
    pub example_id: usize,
    pub concept: usize,
    pub round: usize,
    pub pre_concept: usize,
    pub post_concept: usize,
    pub pre_task: usize,
    pub post_task: usize,
    pub dropped: usize,
    pub grown: usize,
    pub clamped: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InterventionLog {
    pub events: Vec<InterventionEvent>,
}

impl InterventionLog {
    pub fn to_jsonl(&self) -> String {
        self.events
            .iter()
            .map(|e| serde_json::to_string(e).expect("event serializes") + "\n")
            .collect()
    }
}

/// Sparsity-based intervention on one example.
///
/// For each corrected concept (concept -> true class) whose prediction is
/// wrong, runs up to `cfg.rounds` drop/grow rounds on that concept's mask,
/// stopping as soon as the prediction matches. Only masks change.
pub fn sparsity_intervene(
    example: &Example,
    corrections: &BTreeMap<usize, usize>,
    params: &ModelParams,
    masks: &mut MaskSet,
    cfg: &InterventionConfig,
) -> Result<Vec<InterventionEvent>> {
    cfg.validate()?;
    let mut events = Vec::new();
    for (&k, &label) in corrections {
        if k >= params.num_concepts() || label >= params.concept_classes() {
            return Err(Error::config(format!("correction {k}={label} outside the model")));
        }
        for round in 0..cfg.rounds {
            let pre = crate::model::predict(example, params, masks)?;
            if pre.concepts[k] == label {
                break;
            }
            let products = gradient_weight_products(example, k, label, params, masks)?;
            let before = masks.get(k).clone();
            let edit = match cfg.rule {
                SwapRule::Magnitude => {
                    let s: Vec<f64> = products.iter().map(|v| v.abs()).collect();
                    swap(masks.get_mut(k), &s, &s, cfg.r)?
                }
                SwapRule::Signed => {
                    let removal: Vec<f64> = products.iter().map(|v| -v).collect();
                    swap(masks.get_mut(k), &removal, &removal, cfg.r)?
                }
            };
            if cfg.accept_if_improved
                && concept_loss(example, k, label, params, masks)?
                    >= concept_loss_with(example, k, label, params, masks, k, &before)?
            {
                *masks.get_mut(k) = before;
                events.push(InterventionEvent {
                    example_id: example.id,
                    concept: k,
                    round,
                    pre_concept: pre.concepts[k],
                    post_concept: pre.concepts[k],
                    pre_task: pre.task,
                    post_task: pre.task,
                    dropped: 0,
                    grown: 0,
                    clamped: edit.clamped,
                });
                break;
            }
            let post = crate::model::predict(example, params, masks)?;
            events.push(InterventionEvent {
                example_id: example.id,
                concept: k,
                round,
                pre_concept: pre.concepts[k],
                post_concept: post.concepts[k],
                pre_task: pre.task,
                post_task: post.task,
                dropped: edit.dropped.len(),
                grown: edit.grown.len(),
                clamped: edit.clamped,
            });
            if edit.dropped.is_empty() {
                break;
            }
        }
    }
    Ok(events)
}

fn concept_loss(
    example: &Example,
    k: usize,
    label: usize,
    params: &ModelParams,
    masks: &MaskSet,
) -> Result<f64> {
    let compiled = CompiledPathway::new(params, masks)?;
    let trace = compiled.forward(&example.token_ids)?;
    crate::diffcore::softmax_cross_entropy(&trace.concept_logits[k], label)
}

fn concept_loss_with(
    example: &Example,
    k: usize,
    label: usize,
    params: &ModelParams,
    masks: &MaskSet,
    replace: usize,
    mask: &Mask,
) -> Result<f64> {
    let mut alt = masks.clone();
    *alt.get_mut(replace) = mask.clone();
    concept_loss(example, k, label, params, &alt)
}

/// Concepts whose prediction disagrees with the label, mapped to the label.
pub fn mispredicted(pred: &Prediction, example: &Example) -> BTreeMap<usize, usize> {
    pred.concepts
        .iter()
        .zip(&example.concept_labels)
        .enumerate()
        .filter(|(_, (p, g))| p != g)
        .map(|(k, (_, &g))| (k, g))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracies {
    pub concept: f64,
    pub task: f64,
}

fn tally(preds: &[Prediction], examples: &[Example]) -> Accuracies {
    let k = examples.first().map_or(0, |e| e.concept_labels.len());
    let mut concept_hits = 0usize;
    let mut task_hits = 0usize;
    for (p, e) in preds.iter().zip(examples) {
        concept_hits += p
            .concepts
            .iter()
            .zip(&e.concept_labels)
            .filter(|(a, b)| a == b)
            .count();
        task_hits += usize::from(p.task == e.task_label);
    }
    let n = examples.len().max(1) as f64;
    Accuracies {
        concept: concept_hits as f64 / (n * k.max(1) as f64),
        task: task_hits as f64 / n,
    }
}

/// One row of the NI/SI table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionRow {
    pub r: f64,
    pub mode: InterventionMode,
    pub ni: Accuracies,
    /// Prediction of each example right after its own intervention.
    pub si: Accuracies,
    /// Whole split re-evaluated with the masks left by the stream.
    pub replay: Accuracies,
    /// Prunable positions whose bit differs from the starting masks in any
    /// concept, divided by the prunable size.
    pub modified_fraction: f64,
    pub interventions: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InterventionTable {
    pub rows: Vec<InterventionRow>,
}

impl InterventionTable {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes") + "\n"
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(
            "mode      r       NI concept  NI task  SI concept  SI task  replay concept  replay task  modified\n",
        );
        for row in &self.rows {
            let mode = match row.mode {
                InterventionMode::Oracle => "oracle",
                InterventionMode::Sparsity => "sparsity",
            };
            out.push_str(&format!(
                "{mode:<9} {:<7} {:>10.1}  {:>7.1}  {:>10.1}  {:>7.1}  {:>14.1}  {:>11.1}  {:>7.2}%\n",
                row.r,
                100.0 * row.ni.concept,
                100.0 * row.ni.task,
                100.0 * row.si.concept,
                100.0 * row.si.task,
                100.0 * row.replay.concept,
                100.0 * row.replay.task,
                100.0 * row.modified_fraction,
            ));
        }
        out
    }
}

/// Streams `examples` once per value of `r_grid`, intervening on every
/// mispredicted concept (detected with the gold labels). Mask edits persist
/// along the stream; each `r` starts again from `masks`.
pub fn evaluate_intervention(
    examples: &[Example],
    params: &ModelParams,
    masks: &MaskSet,
    r_grid: &[f64],
    cfg: &InterventionConfig,
) -> Result<(InterventionTable, InterventionLog)> {
    if examples.is_empty() {
        return Err(Error::config("intervention needs a nonempty split"));
    }
    let baseline = crate::model::predict_all(examples, params, masks)?;
    let ni = tally(&baseline, examples);
    let mut table = InterventionTable::default();
    let mut log = InterventionLog::default();
    if cfg.mode == InterventionMode::Oracle {
        let compiled = CompiledPathway::new(params, masks)?;
        let mut preds = Vec::with_capacity(examples.len());
        for ex in examples {
            let trace = compiled.forward(&ex.token_ids)?;
            let pred = Prediction::from_trace(&trace);
            let wrong = mispredicted(&pred, ex);
            let out = oracle_intervene(&trace, &wrong, params)?;
            let mut concepts = pred.concepts.clone();
            for (&k, &c) in &wrong {
                concepts[k] = c;
            }
            preds.push(Prediction {
                task: out.task,
                concepts,
            });
        }
        let si = tally(&preds, examples);
        table.rows.push(InterventionRow {
            r: 0.0,
            mode: InterventionMode::Oracle,
            ni,
            si,
            replay: ni,
            modified_fraction: 0.0,
            interventions: 0,
        });
        return Ok((table, log));
    }
    let len = masks.mask_len();
    for &r in r_grid {
        let run = InterventionConfig { r, ..cfg.clone() };
        run.validate()?;
        let mut current = masks.clone();
        let mut preds = Vec::with_capacity(examples.len());
        let mut count = 0;
        for ex in examples {
            let pred = crate::model::predict(ex, params, &current)?;
            let wrong = mispredicted(&pred, ex);
            if wrong.is_empty() || swap_count(r, len) == 0 {
                preds.push(pred);
                continue;
            }
            let events = sparsity_intervene(ex, &wrong, params, &mut current, &run)?;
            count += events.len();
            log.events.extend(events);
            preds.push(crate::model::predict(ex, params, &current)?);
        }
        let replay = crate::model::predict_all(examples, params, &current)?;
        let modified = (0..len)
            .filter(|&i| (0..masks.len()).any(|k| masks.get(k).get(i) != current.get(k).get(i)))
            .count();
        table.rows.push(InterventionRow {
            r,
            mode: InterventionMode::Sparsity,
            ni,
            si: tally(&preds, examples),
            replay: tally(&replay, examples),
            modified_fraction: modified as f64 / len.max(1) as f64,
            interventions: count,
        });
    }
    Ok((table, log))
}
