//! Parameters, concept masks and the masked decision pathway.
//!
//! The encoder is `embedding -> mean pool -> MLP (ReLU hidden layers, linear
//! output)`. Every encoder weight matrix is prunable and lives in one flat
//! [`ParamVector`]; biases and embeddings are not prunable. Concept `k` reads
//! the encoder through its own mask `M_k`, projects the latent vector with a
//! `V x E` block, applies an elementwise sigmoid, and contributes
//! `phi_k · a_k` to the task logits.

mod checkpoint;
mod mask;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use mask::{Mask, MaskSet};

use crate::data::{DatasetSchema, Example};
use crate::diffcore::graph::{CompiledPathway, ForwardTrace};
use crate::diffcore::{argmax, Matrix, ParamVector};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub emb_dim: usize,
    pub hidden_dims: Vec<usize>,
    /// Width `E` of the latent representation fed to the projector.
    pub latent_dim: usize,
    pub num_concepts: usize,
    pub concept_classes: usize,
    pub task_classes: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Defaults sized for the synthetic benchmark: 32-d embeddings, two
    /// hidden layers of 64, a 64-d latent space.
    pub fn for_schema(schema: &DatasetSchema, vocab_size: usize, seed: u64) -> Self {
        Self {
            vocab_size,
            emb_dim: 32,
            hidden_dims: vec![64, 64],
            latent_dim: 64,
            num_concepts: schema.num_concepts(),
            concept_classes: schema.concept_classes(),
            task_classes: schema.task_class_count,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims_ok = self.vocab_size >= 2
            && self.emb_dim >= 1
            && self.latent_dim >= 1
            && self.hidden_dims.iter().all(|&d| d >= 1)
            && self.num_concepts >= 1
            && self.concept_classes >= 2
            && self.task_classes >= 2;
        if dims_ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid model dimensions: {self:?}")))
        }
    }

    /// Layer widths from the pooled embedding to the latent output.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.emb_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.latent_dim);
        dims
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_dims.len() + 1
    }

    /// Size `L` of the prunable space.
    pub fn prunable_len(&self) -> usize {
        self.layer_dims().windows(2).map(|w| w[0] * w[1]).sum()
    }
}

/// Direct `E -> C` task head used only by the vanilla (no bottleneck) baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectHead {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Which parameters a tensor belongs to; used to select trainable subsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Embeddings,
    Encoder,
    EncoderBias,
    Projector,
    ProjectorBias,
    Classifier,
    Head,
    Compensation,
}

impl ParamGroup {
    pub const TRAINABLE: [ParamGroup; 7] = [
        ParamGroup::Embeddings,
        ParamGroup::Encoder,
        ParamGroup::EncoderBias,
        ParamGroup::Projector,
        ParamGroup::ProjectorBias,
        ParamGroup::Classifier,
        ParamGroup::Head,
    ];
}

#[derive(Debug)]
pub struct Tensor<'a> {
    pub name: String,
    pub group: ParamGroup,
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [f64],
}

#[derive(Debug)]
pub struct TensorMut<'a> {
    pub name: String,
    pub group: ParamGroup,
    pub rows: usize,
    pub cols: usize,
    pub data: &'a mut [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `|vocab| x emb_dim`; row 0 is PAD.
    pub embeddings: Matrix,
    /// Prunable encoder weights, one block per layer (`out x in`).
    pub theta: ParamVector,
    pub encoder_bias: Vec<Vec<f64>>,
    /// `K` blocks of `V x E`.
    pub projector: Vec<Matrix>,
    pub projector_bias: Vec<Vec<f64>>,
    /// `K` blocks of `C x V`.
    pub classifier: Vec<Matrix>,
    pub head: Option<DirectHead>,
    /// Optional per-concept additive corrections to `theta`, applied only in
    /// that concept's encoder pass. Empty when unused.
    pub compensation: Vec<Vec<f64>>,
}

fn encoder_shapes(cfg: &ModelConfig) -> Vec<(String, usize, usize)> {
    cfg.layer_dims()
        .windows(2)
        .enumerate()
        .map(|(l, w)| (format!("encoder.{l}.weight"), w[1], w[0]))
        .collect()
}

impl ModelParams {
    /// All-zero parameters with the shapes implied by `cfg`.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let dims = cfg.layer_dims();
        let k = cfg.num_concepts;
        Self {
            embeddings: Matrix::zeros(cfg.vocab_size, cfg.emb_dim),
            theta: ParamVector::zeros(&encoder_shapes(cfg)),
            encoder_bias: dims[1..].iter().map(|&d| vec![0.0; d]).collect(),
            projector: (0..k)
                .map(|_| Matrix::zeros(cfg.concept_classes, cfg.latent_dim))
                .collect(),
            projector_bias: (0..k).map(|_| vec![0.0; cfg.concept_classes]).collect(),
            classifier: (0..k)
                .map(|_| Matrix::zeros(cfg.task_classes, cfg.concept_classes))
                .collect(),
            head: None,
            compensation: Vec::new(),
        }
    }

    /// Seeded random initialisation: unit-normal embeddings, He-normal
    /// encoder weights, `1/sqrt(fan_in)` projector and classifier.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut p = Self::zeros(cfg);
        let mut rng = rng::derived(cfg.seed, 1);
        let unit = Normal::new(0.0, 1.0).expect("valid normal");
        p.embeddings
            .data
            .iter_mut()
            .for_each(|v| *v = unit.sample(&mut rng));
        for bi in 0..p.theta.blocks().len() {
            let fan_in = p.theta.blocks()[bi].cols as f64;
            let std = (2.0 / fan_in).sqrt();
            for v in p.theta.block_mut(bi) {
                *v = std * unit.sample(&mut rng);
            }
        }
        let ps = 1.0 / (cfg.latent_dim as f64).sqrt();
        for m in &mut p.projector {
            m.data.iter_mut().for_each(|v| *v = ps * unit.sample(&mut rng));
        }
        let cs = 1.0 / (cfg.concept_classes as f64).sqrt();
        for m in &mut p.classifier {
            m.data.iter_mut().for_each(|v| *v = cs * unit.sample(&mut rng));
        }
        Ok(p)
    }

    /// Adds a freshly initialised direct head (vanilla baseline).
    pub fn attach_head(&mut self, seed: u64) {
        let latent = self.projector.first().map_or(0, |p| p.cols);
        let classes = self.classifier.first().map_or(0, |c| c.rows);
        let mut rng = rng::derived(seed, 2);
        let s = 1.0 / (latent as f64).sqrt();
        let weight = Matrix {
            rows: classes,
            cols: latent,
            data: (0..classes * latent)
                .map(|_| s * (rng.random::<f64>() * 2.0 - 1.0))
                .collect(),
        };
        self.head = Some(DirectHead {
            weight,
            bias: vec![0.0; classes],
        });
    }

    pub fn num_concepts(&self) -> usize {
        self.projector.len()
    }

    pub fn concept_classes(&self) -> usize {
        self.projector.first().map_or(0, |p| p.rows)
    }

    pub fn task_classes(&self) -> usize {
        self.classifier.first().map_or(0, |c| c.rows)
    }

    pub fn prunable_len(&self) -> usize {
        self.theta.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.embeddings.rows
    }

    /// Same shapes, every value zero (used as a gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        let zero = |m: &Matrix| Matrix::zeros(m.rows, m.cols);
        Self {
            embeddings: zero(&self.embeddings),
            theta: self.theta.zeros_like(),
            encoder_bias: self.encoder_bias.iter().map(|b| vec![0.0; b.len()]).collect(),
            projector: self.projector.iter().map(zero).collect(),
            projector_bias: self.projector_bias.iter().map(|b| vec![0.0; b.len()]).collect(),
            classifier: self.classifier.iter().map(zero).collect(),
            head: self.head.as_ref().map(|h| DirectHead {
                weight: zero(&h.weight),
                bias: vec![0.0; h.bias.len()],
            }),
            compensation: self.compensation.iter().map(|c| vec![0.0; c.len()]).collect(),
        }
    }

    /// Every tensor in canonical order: embeddings, encoder weights (in
    /// block-map order), encoder biases, projector weights and biases,
    /// classifier, head, compensation.
    pub fn tensors(&self) -> Vec<Tensor<'_>> {
        let mut out = vec![Tensor {
            name: "embeddings".into(),
            group: ParamGroup::Embeddings,
            rows: self.embeddings.rows,
            cols: self.embeddings.cols,
            data: &self.embeddings.data,
        }];
        for (bi, b) in self.theta.blocks().iter().enumerate() {
            out.push(Tensor {
                name: b.name.clone(),
                group: ParamGroup::Encoder,
                rows: b.rows,
                cols: b.cols,
                data: self.theta.block(bi),
            });
        }
        for (l, b) in self.encoder_bias.iter().enumerate() {
            out.push(Tensor {
                name: format!("encoder.{l}.bias"),
                group: ParamGroup::EncoderBias,
                rows: b.len(),
                cols: 1,
                data: b,
            });
        }
        for (k, (w, b)) in self.projector.iter().zip(&self.projector_bias).enumerate() {
            out.push(Tensor {
                name: format!("projector.{k}.weight"),
                group: ParamGroup::Projector,
                rows: w.rows,
                cols: w.cols,
                data: &w.data,
            });
            out.push(Tensor {
                name: format!("projector.{k}.bias"),
                group: ParamGroup::ProjectorBias,
                rows: b.len(),
                cols: 1,
                data: b,
            });
        }
        for (k, w) in self.classifier.iter().enumerate() {
            out.push(Tensor {
                name: format!("classifier.{k}.weight"),
                group: ParamGroup::Classifier,
                rows: w.rows,
                cols: w.cols,
                data: &w.data,
            });
        }
        if let Some(h) = &self.head {
            out.push(Tensor {
                name: "head.weight".into(),
                group: ParamGroup::Head,
                rows: h.weight.rows,
                cols: h.weight.cols,
                data: &h.weight.data,
            });
            out.push(Tensor {
                name: "head.bias".into(),
                group: ParamGroup::Head,
                rows: h.bias.len(),
                cols: 1,
                data: &h.bias,
            });
        }
        for (k, c) in self.compensation.iter().enumerate() {
            out.push(Tensor {
                name: format!("compensation.{k}"),
                group: ParamGroup::Compensation,
                rows: c.len(),
                cols: 1,
                data: c,
            });
        }
        out
    }

    /// Mutable counterpart of [`ModelParams::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let mut out = vec![TensorMut {
            name: "embeddings".into(),
            group: ParamGroup::Embeddings,
            rows: self.embeddings.rows,
            cols: self.embeddings.cols,
            data: &mut self.embeddings.data,
        }];
        let blocks = self.theta.blocks().to_vec();
        let mut rest: &mut [f64] = &mut self.theta.values;
        for b in blocks {
            let (head, tail) = rest.split_at_mut(b.len());
            rest = tail;
            out.push(TensorMut {
                name: b.name.clone(),
                group: ParamGroup::Encoder,
                rows: b.rows,
                cols: b.cols,
                data: head,
            });
        }
        for (l, b) in self.encoder_bias.iter_mut().enumerate() {
            out.push(TensorMut {
                name: format!("encoder.{l}.bias"),
                group: ParamGroup::EncoderBias,
                rows: b.len(),
                cols: 1,
                data: b,
            });
        }
        for (k, (w, b)) in self
            .projector
            .iter_mut()
            .zip(self.projector_bias.iter_mut())
            .enumerate()
        {
            out.push(TensorMut {
                name: format!("projector.{k}.weight"),
                group: ParamGroup::Projector,
                rows: w.rows,
                cols: w.cols,
                data: &mut w.data,
            });
            out.push(TensorMut {
                name: format!("projector.{k}.bias"),
                group: ParamGroup::ProjectorBias,
                rows: b.len(),
                cols: 1,
                data: b,
            });
        }
        for (k, w) in self.classifier.iter_mut().enumerate() {
            out.push(TensorMut {
                name: format!("classifier.{k}.weight"),
                group: ParamGroup::Classifier,
                rows: w.rows,
                cols: w.cols,
                data: &mut w.data,
            });
        }
        if let Some(h) = &mut self.head {
            out.push(TensorMut {
                name: "head.weight".into(),
                group: ParamGroup::Head,
                rows: h.weight.rows,
                cols: h.weight.cols,
                data: &mut h.weight.data,
            });
            out.push(TensorMut {
                name: "head.bias".into(),
                group: ParamGroup::Head,
                rows: h.bias.len(),
                cols: 1,
                data: &mut h.bias,
            });
        }
        for (k, c) in self.compensation.iter_mut().enumerate() {
            out.push(TensorMut {
                name: format!("compensation.{k}"),
                group: ParamGroup::Compensation,
                rows: c.len(),
                cols: 1,
                data: c,
            });
        }
        out
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// Adds `scale * other` to every tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.data.iter_mut().zip(src.data) {
                *d += scale * s;
            }
        }
    }

    pub fn all_finite(&self) -> std::result::Result<(), String> {
        for t in self.tensors() {
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(t.name);
            }
        }
        Ok(())
    }
}

/// Per-concept output of a forward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptActivations {
    /// `K x V` pre-sigmoid projector outputs.
    pub logits: Vec<Vec<f64>>,
    /// `K x V`, equal to `sigmoid(logits)`.
    pub activations: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathwayOutput {
    pub task_logits: Vec<f64>,
    pub concepts: ConceptActivations,
    /// `K x C`, `phi_k · a_k`; sums to `task_logits`.
    pub contributions: Vec<Vec<f64>>,
}

impl From<&ForwardTrace> for PathwayOutput {
    fn from(t: &ForwardTrace) -> Self {
        Self {
            task_logits: t.task_logits.clone(),
            concepts: ConceptActivations {
                logits: t.concept_logits.clone(),
                activations: t.activations.clone(),
            },
            contributions: t.contributions.clone(),
        }
    }
}

/// Latent vector `z` of one encoder pass through `mask` (`None` = dense).
pub fn encode(tokens: &[usize], params: &ModelParams, mask: Option<&Mask>) -> Result<Vec<f64>> {
    let ones;
    let mask = match mask {
        Some(m) => m,
        None => {
            ones = Mask::ones(params.prunable_len());
            &ones
        }
    };
    crate::diffcore::graph::encode_masked(tokens, params, mask, None)
}

/// Runs the full masked decision pathway on one example.
pub fn forward_pathway(
    example: &Example,
    params: &ModelParams,
    masks: &MaskSet,
) -> Result<PathwayOutput> {
    let compiled = CompiledPathway::new(params, masks)?;
    let trace = compiled.forward(&example.token_ids)?;
    Ok(PathwayOutput::from(&trace))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub task: usize,
    pub concepts: Vec<usize>,
}

impl Prediction {
    pub fn from_trace(trace: &ForwardTrace) -> Self {
        let task = match &trace.head_logits {
            Some(h) => argmax(h),
            None => argmax(&trace.task_logits),
        };
        Self {
            task,
            concepts: trace.concept_logits.iter().map(|l| argmax(l)).collect(),
        }
    }
}

/// Task class and per-concept classes (argmax, ties to the lowest index).
/// Models carrying a direct head (vanilla baseline) predict the task with it.
pub fn predict(example: &Example, params: &ModelParams, masks: &MaskSet) -> Result<Prediction> {
    let compiled = CompiledPathway::new(params, masks)?;
    Ok(Prediction::from_trace(&compiled.forward(&example.token_ids)?))
}

/// Predictions for many examples with one compiled pathway.
pub fn predict_all(
    examples: &[Example],
    params: &ModelParams,
    masks: &MaskSet,
) -> Result<Vec<Prediction>> {
    let compiled = CompiledPathway::new(params, masks)?;
    examples
        .iter()
        .map(|ex| Ok(Prediction::from_trace(&compiled.forward(&ex.token_ids)?)))
        .collect()
}
