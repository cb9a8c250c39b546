//! Forward pass and exact reverse-mode gradients for the fixed graph
//! `embedding -> mean pool -> masked MLP -> K projectors -> sigmoid -> K classifiers -> sum`.

use super::ops::{sigmoid_scalar, Matrix};
use crate::error::{Error, Result};
use crate::model::{Mask, MaskSet, ModelParams};

/// Effective weights of one encoder pass: `mask ⊙ (theta + delta)`.
fn effective_layers(params: &ModelParams, mask: &Mask, delta: Option<&[f64]>) -> Vec<Matrix> {
    let theta = &params.theta;
    theta
        .blocks()
        .iter()
        .map(|b| {
            let data = b
                .range()
                .map(|i| {
                    if !mask.get(i) {
                        0.0
                    } else if let Some(d) = delta {
                        theta.values[i] + d[i]
                    } else {
                        theta.values[i]
                    }
                })
                .collect();
            Matrix {
                rows: b.rows,
                cols: b.cols,
                data,
            }
        })
        .collect()
}

fn check_tokens(tokens: &[usize], params: &ModelParams) -> Result<()> {
    let vocab = params.vocab_size();
    match tokens.iter().find(|&&t| t >= vocab) {
        Some(&bad) => Err(Error::data(format!(
            "token id {bad} outside vocabulary of size {vocab}"
        ))),
        None => Ok(()),
    }
}

/// Mean of the token embeddings; an empty sequence pools to the PAD row.
fn pool(tokens: &[usize], embeddings: &Matrix) -> Vec<f64> {
    if tokens.is_empty() {
        return embeddings.row(0).to_vec();
    }
    let mut pooled = vec![0.0; embeddings.cols];
    for &t in tokens {
        for (p, &e) in pooled.iter_mut().zip(embeddings.row(t)) {
            *p += e;
        }
    }
    let inv = 1.0 / tokens.len() as f64;
    pooled.iter_mut().for_each(|p| *p *= inv);
    pooled
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchCache {
    /// Input to each encoder layer (`layer_inputs[0]` is the pooled embedding).
    pub layer_inputs: Vec<Vec<f64>>,
    pub pre_activations: Vec<Vec<f64>>,
    pub latent: Vec<f64>,
}

fn run_layers(
    layers: &[Matrix],
    biases: &[Vec<f64>],
    pooled: Vec<f64>,
) -> BranchCache {
    let n = layers.len();
    let mut layer_inputs = Vec::with_capacity(n);
    let mut pre_activations = Vec::with_capacity(n);
    let mut h = pooled;
    for (l, (w, b)) in layers.iter().zip(biases).enumerate() {
        let mut s = w.matvec(&h);
        for (si, bi) in s.iter_mut().zip(b) {
            *si += bi;
        }
        let out = if l + 1 < n {
            s.iter().map(|&v| v.max(0.0)).collect()
        } else {
            s.clone()
        };
        layer_inputs.push(h);
        pre_activations.push(s);
        h = out;
    }
    BranchCache {
        layer_inputs,
        pre_activations,
        latent: h,
    }
}

/// One encoder pass through `mask` with an optional additive weight correction.
pub fn encode_masked(
    tokens: &[usize],
    params: &ModelParams,
    mask: &Mask,
    delta: Option<&[f64]>,
) -> Result<Vec<f64>> {
    if mask.len() != params.prunable_len() {
        return Err(Error::Dimension {
            context: "mask length".into(),
            expected: params.prunable_len(),
            actual: mask.len(),
        });
    }
    check_tokens(tokens, params)?;
    let layers = effective_layers(params, mask, delta);
    let pooled = pool(tokens, &params.embeddings);
    Ok(run_layers(&layers, &params.encoder_bias, pooled).latent)
}

struct Branch {
    layers: Vec<Matrix>,
    /// Concept whose mask defines this branch.
    mask_of: usize,
}

/// Parameters and masks resolved into per-branch effective weights.
///
/// Concepts whose masks (and compensation vectors) coincide share one branch,
/// so a dense model runs the encoder once per example.
pub struct CompiledPathway<'a> {
    params: &'a ModelParams,
    masks: &'a MaskSet,
    branches: Vec<Branch>,
    concept_branch: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub tokens: Vec<usize>,
    pub branches: Vec<BranchCache>,
    /// Branch index used by each concept.
    pub concept_branch: Vec<usize>,
    pub concept_logits: Vec<Vec<f64>>,
    pub activations: Vec<Vec<f64>>,
    pub contributions: Vec<Vec<f64>>,
    pub task_logits: Vec<f64>,
    /// Direct-head logits when the model carries a vanilla head.
    pub head_logits: Option<Vec<f64>>,
}

impl ForwardTrace {
    pub fn latent(&self, concept: usize) -> &[f64] {
        &self.branches[self.concept_branch[concept]].latent
    }
}

/// Upstream gradients fed into the backward pass.
#[derive(Debug, Clone, Default)]
pub struct Upstream {
    /// dL / d(contribution_k), length `C` each.
    pub contributions: Vec<Option<Vec<f64>>>,
    /// dL / d(concept logits_k), length `V` each.
    pub concept_logits: Vec<Option<Vec<f64>>>,
    /// dL / d(head logits).
    pub head: Option<Vec<f64>>,
}

impl Upstream {
    pub fn empty(num_concepts: usize) -> Self {
        Self {
            contributions: vec![None; num_concepts],
            concept_logits: vec![None; num_concepts],
            head: None,
        }
    }

    /// The same task-logit gradient routed into every concept's contribution.
    pub fn task(num_concepts: usize, d_task: &[f64]) -> Self {
        Self {
            contributions: vec![Some(d_task.to_vec()); num_concepts],
            ..Self::empty(num_concepts)
        }
    }
}

/// Result of a backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct GradRecord {
    /// Gradients with the exact shapes of the parameters. Encoder entries are
    /// summed over branches and multiplied by each branch's mask bit.
    pub grads: ModelParams,
    /// Gradient with respect to the effective encoder weights of each branch,
    /// before masking (so pruned positions carry the gradient they would have
    /// if present). Only filled when requested.
    pub raw_encoder: Option<Vec<Vec<f64>>>,
    pub concept_branch: Vec<usize>,
    /// dL / d(embedding of token at position d).
    pub input_grads: Vec<Vec<f64>>,
}

impl GradRecord {
    pub fn raw_for_concept(&self, k: usize) -> Option<&[f64]> {
        self.raw_encoder
            .as_ref()
            .map(|r| r[self.concept_branch[k]].as_slice())
    }
}

impl<'a> CompiledPathway<'a> {
    pub fn new(params: &'a ModelParams, masks: &'a MaskSet) -> Result<Self> {
        let k = params.num_concepts();
        if masks.len() != k {
            return Err(Error::Dimension {
                context: "number of masks".into(),
                expected: k,
                actual: masks.len(),
            });
        }
        if masks.mask_len() != params.prunable_len() {
            return Err(Error::Dimension {
                context: "mask length".into(),
                expected: params.prunable_len(),
                actual: masks.mask_len(),
            });
        }
        let comp = &params.compensation;
        if !comp.is_empty() && (comp.len() != k || comp.iter().any(|c| c.len() != params.prunable_len())) {
            return Err(Error::data("compensation vectors do not match the model"));
        }
        let delta = |c: usize| comp.get(c).map(Vec::as_slice);
        let mut branches: Vec<Branch> = Vec::new();
        let mut concept_branch = Vec::with_capacity(k);
        for c in 0..k {
            let shared = branches.iter().position(|b| {
                masks.get(b.mask_of) == masks.get(c) && delta(b.mask_of) == delta(c)
            });
            match shared {
                Some(bi) => concept_branch.push(bi),
                None => {
                    concept_branch.push(branches.len());
                    branches.push(Branch {
                        layers: effective_layers(params, masks.get(c), delta(c)),
                        mask_of: c,
                    });
                }
            }
        }
        Ok(Self {
            params,
            masks,
            branches,
            concept_branch,
        })
    }

    pub fn num_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn params(&self) -> &ModelParams {
        self.params
    }

    pub fn forward(&self, tokens: &[usize]) -> Result<ForwardTrace> {
        check_tokens(tokens, self.params)?;
        let p = self.params;
        let pooled = pool(tokens, &p.embeddings);
        let branches: Vec<BranchCache> = self
            .branches
            .iter()
            .map(|b| run_layers(&b.layers, &p.encoder_bias, pooled.clone()))
            .collect();

        let k = p.num_concepts();
        let mut concept_logits = Vec::with_capacity(k);
        let mut activations = Vec::with_capacity(k);
        let mut contributions = Vec::with_capacity(k);
        let mut task_logits = vec![0.0; p.task_classes()];
        for c in 0..k {
            let z = &branches[self.concept_branch[c]].latent;
            let mut logits = p.projector[c].matvec(z);
            for (l, b) in logits.iter_mut().zip(&p.projector_bias[c]) {
                *l += b;
            }
            if logits.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!("projector.{c}")));
            }
            let act: Vec<f64> = logits.iter().map(|&v| sigmoid_scalar(v)).collect();
            let contrib = p.classifier[c].matvec(&act);
            for (t, v) in task_logits.iter_mut().zip(&contrib) {
                *t += v;
            }
            concept_logits.push(logits);
            activations.push(act);
            contributions.push(contrib);
        }
        if task_logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("classifier"));
        }
        let head_logits = match &p.head {
            Some(h) if k > 0 => {
                let z = &branches[self.concept_branch[0]].latent;
                let mut out = h.weight.matvec(z);
                for (o, b) in out.iter_mut().zip(&h.bias) {
                    *o += b;
                }
                Some(out)
            }
            _ => None,
        };
        Ok(ForwardTrace {
            tokens: tokens.to_vec(),
            branches,
            concept_branch: self.concept_branch.clone(),
            concept_logits,
            activations,
            contributions,
            task_logits,
            head_logits,
        })
    }

    /// Fresh gradient record for one example. Fails with the offending tensor
    /// name if any gradient is non-finite.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        upstream: &Upstream,
        keep_raw: bool,
    ) -> Result<GradRecord> {
        let mut grads = self.params.zeros_like();
        let mut raw = keep_raw.then(|| vec![vec![0.0; self.params.prunable_len()]; self.branches.len()]);
        let mut input_grads = Vec::new();
        self.run_backward(trace, upstream, &mut grads, raw.as_mut(), Some(&mut input_grads));
        if let Err(name) = grads.all_finite() {
            return Err(Error::numeric(format!("gradient of {name}")));
        }
        Ok(GradRecord {
            grads,
            raw_encoder: raw,
            concept_branch: self.concept_branch.clone(),
            input_grads,
        })
    }

    /// Adds this example's parameter gradients into `grads`.
    pub fn accumulate(&self, trace: &ForwardTrace, upstream: &Upstream, grads: &mut ModelParams) {
        self.run_backward(trace, upstream, grads, None, None);
    }

    fn run_backward(
        &self,
        trace: &ForwardTrace,
        upstream: &Upstream,
        grads: &mut ModelParams,
        mut raw: Option<&mut Vec<Vec<f64>>>,
        input_grads: Option<&mut Vec<Vec<f64>>>,
    ) {
        let p = self.params;
        let k = p.num_concepts();
        let mut d_latent: Vec<Option<Vec<f64>>> = vec![None; self.branches.len()];

        for c in 0..k {
            let act = &trace.activations[c];
            let mut d_logit = vec![0.0; act.len()];
            let mut touched = false;
            if let Some(d_contrib) = upstream.contributions.get(c).and_then(Option::as_ref) {
                grads.classifier[c].add_outer(d_contrib, act, 1.0);
                let d_act = p.classifier[c].matvec_t(d_contrib);
                for ((dl, da), a) in d_logit.iter_mut().zip(&d_act).zip(act) {
                    *dl += da * a * (1.0 - a);
                }
                touched = true;
            }
            if let Some(d_direct) = upstream.concept_logits.get(c).and_then(Option::as_ref) {
                for (dl, dd) in d_logit.iter_mut().zip(d_direct) {
                    *dl += dd;
                }
                touched = true;
            }
            if !touched {
                continue;
            }
            let b = self.concept_branch[c];
            let z = &trace.branches[b].latent;
            grads.projector[c].add_outer(&d_logit, z, 1.0);
            for (g, dl) in grads.projector_bias[c].iter_mut().zip(&d_logit) {
                *g += dl;
            }
            let dz = p.projector[c].matvec_t(&d_logit);
            add_into(&mut d_latent[b], &dz);
        }

        if let (Some(d_head), Some(head), Some(ghead)) = (&upstream.head, &p.head, &mut grads.head) {
            if k > 0 {
                let b = self.concept_branch[0];
                let z = &trace.branches[b].latent;
                ghead.weight.add_outer(d_head, z, 1.0);
                for (g, d) in ghead.bias.iter_mut().zip(d_head) {
                    *g += d;
                }
                let dz = head.weight.matvec_t(d_head);
                add_into(&mut d_latent[b], &dz);
            }
        }

        let blocks = p.theta.blocks();
        let n_layers = blocks.len();
        let mut d_pooled = vec![0.0; p.embeddings.cols];
        for (bi, branch) in self.branches.iter().enumerate() {
            let Some(mut d_out) = d_latent[bi].take() else {
                continue;
            };
            let cache = &trace.branches[bi];
            let mask = self.masks.get(branch.mask_of);
            for l in (0..n_layers).rev() {
                let mut d_s = d_out;
                if l + 1 < n_layers {
                    for (ds, s) in d_s.iter_mut().zip(&cache.pre_activations[l]) {
                        if *s <= 0.0 {
                            *ds = 0.0;
                        }
                    }
                }
                let input = &cache.layer_inputs[l];
                let blk = &blocks[l];
                let gtheta = &mut grads.theta.values[blk.range()];
                let mbits = &mask.bits()[blk.range()];
                let mut raw_l = raw.as_deref_mut().map(|r| &mut r[bi][blk.range()]);
                for (r, &dsr) in d_s.iter().enumerate() {
                    if dsr == 0.0 {
                        continue;
                    }
                    let row = r * blk.cols..(r + 1) * blk.cols;
                    let g_row = &mut gtheta[row.clone()];
                    let m_row = &mbits[row.clone()];
                    for ((g, &m), &x) in g_row.iter_mut().zip(m_row).zip(input) {
                        if m {
                            *g += dsr * x;
                        }
                    }
                    if let Some(raw_l) = raw_l.as_deref_mut() {
                        for (g, &x) in raw_l[row].iter_mut().zip(input) {
                            *g += dsr * x;
                        }
                    }
                }
                for (g, ds) in grads.encoder_bias[l].iter_mut().zip(&d_s) {
                    *g += ds;
                }
                d_out = branch.layers[l].matvec_t(&d_s);
            }
            for (dp, d) in d_pooled.iter_mut().zip(&d_out) {
                *dp += d;
            }
        }

        let tokens = &trace.tokens;
        let emb_cols = p.embeddings.cols;
        if tokens.is_empty() {
            let row = &mut grads.embeddings.data[..emb_cols];
            for (g, d) in row.iter_mut().zip(&d_pooled) {
                *g += d;
            }
            if let Some(ig) = input_grads {
                ig.clear();
            }
            return;
        }
        let scale = 1.0 / tokens.len() as f64;
        let d_tok: Vec<f64> = d_pooled.iter().map(|d| d * scale).collect();
        for &t in tokens {
            let row = &mut grads.embeddings.data[t * emb_cols..(t + 1) * emb_cols];
            for (g, d) in row.iter_mut().zip(&d_tok) {
                *g += d;
            }
        }
        if let Some(ig) = input_grads {
            *ig = vec![d_tok; tokens.len()];
        }
    }
}

fn add_into(slot: &mut Option<Vec<f64>>, v: &[f64]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(v).for_each(|(a, b)| *a += b),
        None => *slot = Some(v.to_vec()),
    }
}
