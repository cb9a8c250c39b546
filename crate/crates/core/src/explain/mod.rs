//! Three-level explanations of a prediction: which tokens moved each
//! concept, which encoder weights each concept's subnetwork keeps, and how
//! much each concept pushed the task logits.

mod render;

use serde::{Deserialize, Serialize};

pub use render::{pgm, render_report, saliency_csv};

use crate::data::{DatasetSchema, Vocabulary};
use crate::diffcore::{argmax, dot, CompiledPathway, Upstream};
use crate::error::Result;
use crate::model::{MaskSet, ModelParams};

/// `K x D` gradient magnitudes: entry `(k, d)` is the norm of the gradient of
/// concept `k`'s predicted-class logit with respect to token `d`'s embedding,
/// through concept `k`'s subnetwork.
///
/// Under mean pooling every position receives the same gradient, so each row
/// is constant; see [`token_attribution`] for a per-token signal.
pub fn token_saliency(tokens: &[usize], params: &ModelParams, masks: &MaskSet) -> Result<Vec<Vec<f64>>> {
    Ok(token_gradients(tokens, params, masks)?
        .into_iter()
        .map(|rows| rows.iter().map(|g| dot(g, g).sqrt()).collect())
        .collect())
}

/// `K x D` gradient-times-input scores `<grad_d, e_d>` for the same logit as
/// [`token_saliency`]. Signed: positive values push the predicted class up.
pub fn token_attribution(tokens: &[usize], params: &ModelParams, masks: &MaskSet) -> Result<Vec<Vec<f64>>> {
    Ok(token_gradients(tokens, params, masks)?
        .into_iter()
        .map(|rows| {
            rows.iter()
                .zip(tokens)
                .map(|(g, &t)| dot(g, params.embeddings.row(t)))
                .collect()
        })
        .collect())
}

fn token_gradients(tokens: &[usize], params: &ModelParams, masks: &MaskSet) -> Result<Vec<Vec<Vec<f64>>>> {
    let compiled = CompiledPathway::new(params, masks)?;
    let trace = compiled.forward(tokens)?;
    let k = params.num_concepts();
    (0..k)
        .map(|c| {
            let logits = &trace.concept_logits[c];
            let mut d = vec![0.0; logits.len()];
            d[argmax(logits)] = 1.0;
            let mut up = Upstream::empty(k);
            up.concept_logits[c] = Some(d);
            Ok(compiled.backward(&trace, &up, false)?.input_grads)
        })
        .collect()
}

/// Concept indices ordered by their contribution to `class`'s logit,
/// largest first; ties keep the lower index first.
pub fn rank_contributions(contributions: &[Vec<f64>], class: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..contributions.len()).collect();
    order.sort_by(|&a, &b| {
        contributions[b][class]
            .total_cmp(&contributions[a][class])
            .then(a.cmp(&b))
    });
    order
}

/// Contributions `phi_k · a_k` and their ranking for the predicted class.
pub fn concept_contributions(trace: &crate::diffcore::ForwardTrace) -> (Vec<Vec<f64>>, Vec<usize>) {
    let class = argmax(&trace.task_logits);
    let contributions = trace.contributions.clone();
    let ranking = rank_contributions(&contributions, class);
    (contributions, ranking)
}

/// Kept/pruned bits of one encoder layer for one concept.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrid {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Row-major, `true` = kept.
    pub bits: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Kept weights in this layer, per concept.
    pub kept: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskStats {
    pub sparsity: Vec<f64>,
    /// Pairwise Jaccard similarity of kept weights.
    pub overlap: Vec<Vec<f64>>,
    pub layers: Vec<LayerStats>,
    /// `grids[k][l]` for heatmaps.
    #[serde(skip)]
    pub grids: Vec<Vec<LayerGrid>>,
}

/// `|a ∧ b| / |a ∨ b|`, 0 when both are empty.
pub fn jaccard(a: &[bool], b: &[bool]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += usize::from(x && y);
        union += usize::from(x || y);
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn mask_overlap(masks: &MaskSet, params: &ModelParams) -> MaskStats {
    let k = masks.len();
    let mut overlap = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i..k {
            let v = if i == j {
                1.0
            } else {
                jaccard(masks.get(i).bits(), masks.get(j).bits())
            };
            overlap[i][j] = v;
            overlap[j][i] = v;
        }
    }
    let blocks = params.theta.blocks();
    let grids: Vec<Vec<LayerGrid>> = masks
        .iter()
        .map(|m| {
            blocks
                .iter()
                .map(|b| LayerGrid {
                    name: b.name.clone(),
                    rows: b.rows,
                    cols: b.cols,
                    bits: m.bits()[b.range()].to_vec(),
                })
                .collect()
        })
        .collect();
    let layers = blocks
        .iter()
        .enumerate()
        .map(|(l, b)| LayerStats {
            name: b.name.clone(),
            rows: b.rows,
            cols: b.cols,
            kept: grids
                .iter()
                .map(|g| g[l].bits.iter().filter(|&&x| x).count())
                .collect(),
        })
        .collect();
    MaskStats {
        sparsity: masks.sparsity(),
        overlap,
        layers,
        grids,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptExplanation {
    pub name: String,
    pub class: usize,
    pub class_name: String,
    pub activations: Vec<f64>,
    /// `phi_k · a_k`.
    pub contribution: Vec<f64>,
}

/// Full decision pathway for one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathwayTrace {
    pub tokens: Vec<String>,
    pub token_ids: Vec<usize>,
    pub token_saliency: Vec<Vec<f64>>,
    pub token_attribution: Vec<Vec<f64>>,
    pub concepts: Vec<ConceptExplanation>,
    /// Concept indices by contribution to the predicted class, largest first.
    pub ranking: Vec<usize>,
    pub task_logits: Vec<f64>,
    pub task: usize,
    pub mask_stats: MaskStats,
}

impl PathwayTrace {
    /// Largest gap between the summed contributions and the task logits.
    pub fn completeness_gap(&self) -> f64 {
        self.task_logits
            .iter()
            .enumerate()
            .map(|(c, t)| (self.concepts.iter().map(|k| k.contribution[c]).sum::<f64>() - t).abs())
            .fold(0.0, f64::max)
    }
}

/// Traces `tokens` through the masked pathway. An empty input pools to the
/// PAD embedding and yields empty saliency rows.
pub fn explain(
    tokens: &[usize],
    vocab: &Vocabulary,
    schema: &DatasetSchema,
    params: &ModelParams,
    masks: &MaskSet,
) -> Result<PathwayTrace> {
    let compiled = CompiledPathway::new(params, masks)?;
    let trace = compiled.forward(tokens)?;
    let (contributions, ranking) = concept_contributions(&trace);
    let concepts = (0..params.num_concepts())
        .map(|k| {
            let class = argmax(&trace.concept_logits[k]);
            ConceptExplanation {
                name: schema
                    .concept_names
                    .get(k)
                    .cloned()
                    .unwrap_or_else(|| format!("concept{k}")),
                class,
                class_name: schema
                    .concept_class_names
                    .get(class)
                    .cloned()
                    .unwrap_or_else(|| class.to_string()),
                activations: trace.activations[k].clone(),
                contribution: contributions[k].clone(),
            }
        })
        .collect();
    Ok(PathwayTrace {
        tokens: tokens
            .iter()
            .map(|&t| vocab.token(t).unwrap_or("<unk>").to_string())
            .collect(),
        token_ids: tokens.to_vec(),
        token_saliency: token_saliency(tokens, params, masks)?,
        token_attribution: token_attribution(tokens, params, masks)?,
        concepts,
        ranking,
        task: argmax(&trace.task_logits),
        task_logits: trace.task_logits,
        mask_stats: mask_overlap(masks, params),
    })
}
