//! Training strategies for the concept bottleneck and the Adam optimizer.
//!
//! - `vanilla`: encoder plus a direct `E -> C` head on the task loss; concept
//!   labels are ignored.
//! - `independent`: encoder and projector on concept labels; the classifier
//!   separately on ground-truth concepts (one-hot), predicted concepts at
//!   inference.
//! - `sequential`: as independent, but the classifier is fit on the frozen
//!   concept predictor's activations.
//! - `joint`: everything on `task + gamma * concepts` through the masked
//!   pathway.

mod adam;
mod loss;

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, Adam, AdamConfig};
pub use loss::{
    breakdown, decomposed_joint_loss, joint_loss, objective_upstream, LossBreakdown, Objective,
    TaskTerm,
};

use crate::data::Example;
use crate::diffcore::{softmax_cross_entropy_grad, CompiledPathway};
use crate::error::{Error, Result};
use crate::evaluation::accuracy;
use crate::model::{predict_all, MaskSet, ModelParams, ParamGroup};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Vanilla,
    Independent,
    Sequential,
    Joint,
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(Self::Vanilla),
            "independent" => Ok(Self::Independent),
            "sequential" => Ok(Self::Sequential),
            "joint" => Ok(Self::Joint),
            other => Err(Error::config(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub strategy: Strategy,
    /// Weight of the concept loss in the joint objective.
    pub gamma: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub task_term: TaskTerm,
    /// Overrides the strategy's default trainable groups (for example to fit
    /// only the classifier on a frozen encoder).
    pub trainable: Option<Vec<ParamGroup>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Joint,
            gamma: 5.0,
            lr: 1e-3,
            epochs: 20,
            batch_size: 8,
            seed: 0,
            task_term: TaskTerm::Single,
            trainable: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) {
            return Err(Error::config(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub stage: String,
    pub epoch: usize,
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_concept_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev_task_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    /// Mean mini-batch loss at every optimizer step, before the update.
    pub step_losses: Vec<f64>,
}

impl TrainReport {
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("log serializes") + "\n")
            .collect()
    }
}

const ENCODER_GROUPS: [ParamGroup; 3] = [
    ParamGroup::Embeddings,
    ParamGroup::Encoder,
    ParamGroup::EncoderBias,
];

/// Trains `params` in place according to `cfg.strategy`.
///
/// Encoder weights only move where at least one mask keeps them, and each
/// concept's branch only sees gradients through its own mask.
pub fn train(
    train_set: &[Example],
    dev: Option<&[Example]>,
    cfg: &TrainConfig,
    params: &mut ModelParams,
    masks: &MaskSet,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let mut report = TrainReport::default();
    let mut trainer = Trainer {
        cfg,
        masks,
        report: &mut report,
        rng: rng::derived(cfg.seed, 3),
    };
    let with = |extra: &[ParamGroup]| -> Vec<ParamGroup> {
        ENCODER_GROUPS.iter().chain(extra).copied().collect()
    };
    match cfg.strategy {
        Strategy::Joint => {
            let groups = cfg.trainable.clone().unwrap_or_else(|| {
                with(&[
                    ParamGroup::Projector,
                    ParamGroup::ProjectorBias,
                    ParamGroup::Classifier,
                ])
            });
            let objective = Objective::Joint {
                gamma: cfg.gamma,
                task_term: cfg.task_term,
            };
            trainer.run_stage("joint", train_set, dev, params, objective, &groups)?;
        }
        Strategy::Vanilla => {
            if params.head.is_none() {
                params.attach_head(cfg.seed);
            }
            let groups = cfg
                .trainable
                .clone()
                .unwrap_or_else(|| with(&[ParamGroup::Head]));
            trainer.run_stage("vanilla", train_set, dev, params, Objective::Head, &groups)?;
        }
        Strategy::Independent | Strategy::Sequential => {
            let groups = cfg
                .trainable
                .clone()
                .unwrap_or_else(|| with(&[ParamGroup::Projector, ParamGroup::ProjectorBias]));
            trainer.run_stage("concepts", train_set, dev, params, Objective::Concepts, &groups)?;
            let inputs = if cfg.strategy == Strategy::Independent {
                ground_truth_activations(train_set, params.num_concepts(), params.concept_classes())
            } else {
                predicted_activations(train_set, params, masks)?
            };
            trainer.fit_classifier(train_set, dev, &inputs, params)?;
        }
    }
    Ok(report)
}

/// One-hot concept vectors from the labels.
fn ground_truth_activations(examples: &[Example], k: usize, v: usize) -> Vec<Vec<Vec<f64>>> {
    examples
        .iter()
        .map(|ex| {
            (0..k)
                .map(|c| {
                    let mut row = vec![0.0; v];
                    row[ex.concept_labels[c]] = 1.0;
                    row
                })
                .collect()
        })
        .collect()
}

fn predicted_activations(
    examples: &[Example],
    params: &ModelParams,
    masks: &MaskSet,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let compiled = CompiledPathway::new(params, masks)?;
    examples
        .iter()
        .map(|ex| Ok(compiled.forward(&ex.token_ids)?.activations))
        .collect()
}

struct Trainer<'a> {
    cfg: &'a TrainConfig,
    masks: &'a MaskSet,
    report: &'a mut TrainReport,
    rng: rng::Rng,
}

impl Trainer<'_> {
    fn batches(&mut self, n: usize) -> Vec<Vec<usize>> {
        rng::permutation(&mut self.rng, n)
            .chunks(self.cfg.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }

    fn run_stage(
        &mut self,
        stage: &str,
        train_set: &[Example],
        dev: Option<&[Example]>,
        params: &mut ModelParams,
        objective: Objective,
        groups: &[ParamGroup],
    ) -> Result<()> {
        let encoder_active = self.masks.union();
        let mut adam = Adam::new(AdamConfig::with_lr(self.cfg.lr));
        for epoch in 0..self.cfg.epochs {
            let mut epoch_loss = 0.0;
            for (bi, batch) in self.batches(train_set.len()).into_iter().enumerate() {
                let mut grads = params.zeros_like();
                let mut batch_loss = 0.0;
                {
                    let compiled = CompiledPathway::new(params, self.masks)?;
                    for &i in &batch {
                        let ex = &train_set[i];
                        let trace = compiled.forward(&ex.token_ids)?;
                        let (loss, up) = objective_upstream(&trace, ex, objective)
                            .map_err(|e| at_batch(e, stage, epoch, bi))?;
                        batch_loss += loss;
                        compiled.accumulate(&trace, &up, &mut grads);
                    }
                }
                let scale = 1.0 / batch.len() as f64;
                for t in grads.tensors_mut() {
                    t.data.iter_mut().for_each(|g| *g *= scale);
                }
                if let Err(name) = grads.all_finite() {
                    return Err(Error::numeric(format!(
                        "{stage} epoch {epoch} batch {bi}: gradient of {name}"
                    )));
                }
                batch_loss *= scale;
                self.report.step_losses.push(batch_loss);
                epoch_loss += batch_loss * batch.len() as f64;
                adam.step_params(params, &grads, groups, Some(&encoder_active))?;
            }
            let mut log = EpochLog {
                stage: stage.to_string(),
                epoch,
                train_loss: epoch_loss / train_set.len() as f64,
                dev_loss: None,
                dev_concept_acc: None,
                dev_task_acc: None,
            };
            if let Some(dev) = dev.filter(|d| !d.is_empty()) {
                let compiled = CompiledPathway::new(params, self.masks)?;
                let mut loss = 0.0;
                for ex in dev {
                    let trace = compiled.forward(&ex.token_ids)?;
                    loss += objective_upstream(&trace, ex, objective)?.0;
                }
                log.dev_loss = Some(loss / dev.len() as f64);
                fill_dev_accuracy(&mut log, dev, params, self.masks)?;
            }
            self.report.epochs.push(log);
        }
        Ok(())
    }

    /// Fits only the classifier blocks on fixed concept activations.
    fn fit_classifier(
        &mut self,
        train_set: &[Example],
        dev: Option<&[Example]>,
        inputs: &[Vec<Vec<f64>>],
        params: &mut ModelParams,
    ) -> Result<()> {
        let mut adam = Adam::new(AdamConfig::with_lr(self.cfg.lr));
        let c = params.task_classes();
        for epoch in 0..self.cfg.epochs {
            let mut epoch_loss = 0.0;
            for (bi, batch) in self.batches(train_set.len()).into_iter().enumerate() {
                let mut grads = params.zeros_like();
                let mut batch_loss = 0.0;
                for &i in &batch {
                    let acts = &inputs[i];
                    let mut logits = vec![0.0; c];
                    for (phi, a) in params.classifier.iter().zip(acts) {
                        for (l, v) in logits.iter_mut().zip(phi.matvec(a)) {
                            *l += v;
                        }
                    }
                    let (loss, d) = softmax_cross_entropy_grad(&logits, train_set[i].task_label)
                        .map_err(|e| at_batch(e, "classifier", epoch, bi))?;
                    batch_loss += loss;
                    for (g, a) in grads.classifier.iter_mut().zip(acts) {
                        g.add_outer(&d, a, 1.0);
                    }
                }
                let scale = 1.0 / batch.len() as f64;
                for g in &mut grads.classifier {
                    g.data.iter_mut().for_each(|x| *x *= scale);
                }
                batch_loss *= scale;
                if !batch_loss.is_finite() {
                    return Err(Error::numeric(format!(
                        "classifier epoch {epoch} batch {bi}: loss"
                    )));
                }
                self.report.step_losses.push(batch_loss);
                epoch_loss += batch_loss * batch.len() as f64;
                adam.step_params(params, &grads, &[ParamGroup::Classifier], None)?;
            }
            let mut log = EpochLog {
                stage: "classifier".into(),
                epoch,
                train_loss: epoch_loss / train_set.len() as f64,
                dev_loss: None,
                dev_concept_acc: None,
                dev_task_acc: None,
            };
            if let Some(dev) = dev.filter(|d| !d.is_empty()) {
                fill_dev_accuracy(&mut log, dev, params, self.masks)?;
            }
            self.report.epochs.push(log);
        }
        Ok(())
    }
}

fn fill_dev_accuracy(
    log: &mut EpochLog,
    dev: &[Example],
    params: &ModelParams,
    masks: &MaskSet,
) -> Result<()> {
    let preds = predict_all(dev, params, masks)?;
    let task_p: Vec<usize> = preds.iter().map(|p| p.task).collect();
    let task_g: Vec<usize> = dev.iter().map(|e| e.task_label).collect();
    log.dev_task_acc = Some(accuracy(&task_p, &task_g)?);
    let k = params.num_concepts();
    let mut hits = 0usize;
    for (p, e) in preds.iter().zip(dev) {
        hits += (0..k).filter(|&c| p.concepts[c] == e.concept_labels[c]).count();
    }
    log.dev_concept_acc = Some(hits as f64 / (k * dev.len()) as f64);
    Ok(())
}

fn at_batch(e: Error, stage: &str, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Numeric { context } => {
            Error::numeric(format!("{stage} epoch {epoch} batch {batch}: {context}"))
        }
        other => other,
    }
}
