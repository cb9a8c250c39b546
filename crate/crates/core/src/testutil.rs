use rand::Rng as _;

use crate::data::Example;
use crate::model::{Mask, MaskSet, ModelConfig, ModelParams};
use crate::rng;

pub fn tiny_config(k: usize, v: usize, c: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        vocab_size: 9,
        emb_dim: 3,
        hidden_dims: vec![4],
        latent_dim: 3,
        num_concepts: k,
        concept_classes: v,
        task_classes: c,
        seed,
    }
}

/// Random model with nonzero biases so that every parameter matters.
pub fn tiny_model(cfg: &ModelConfig) -> ModelParams {
    let mut p = ModelParams::init(cfg).unwrap();
    let mut r = rng::derived(cfg.seed, 99);
    for b in p.encoder_bias.iter_mut().chain(p.projector_bias.iter_mut()) {
        b.iter_mut().for_each(|x| *x = r.random::<f64>() - 0.5);
    }
    p
}

pub fn random_examples(cfg: &ModelConfig, n: usize, seed: u64) -> Vec<Example> {
    let mut r = rng::derived(seed, 98);
    (0..n)
        .map(|id| {
            let len = r.random_range(1..6);
            Example {
                id,
                token_ids: (0..len).map(|_| r.random_range(0..cfg.vocab_size)).collect(),
                concept_labels: (0..cfg.num_concepts)
                    .map(|_| r.random_range(0..cfg.concept_classes))
                    .collect(),
                task_label: r.random_range(0..cfg.task_classes),
            }
        })
        .collect()
}

pub fn random_masks(k: usize, len: usize, keep: f64, seed: u64) -> MaskSet {
    let mut r = rng::derived(seed, 97);
    MaskSet::new(
        (0..k)
            .map(|_| Mask::from_bits((0..len).map(|_| r.random::<f64>() < keep).collect()))
            .collect(),
    )
    .unwrap()
}
