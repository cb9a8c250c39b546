//! Sparse concept bottleneck models for text classification.
//!
//! A small bag-of-embeddings text encoder feeds a concept bottleneck:
//! each concept `k` has its own binary mask over the encoder weights, its own
//! projector block and its own classifier block, and the task logits are the
//! sum of per-concept contributions. The crate covers the full loop:
//!
//! - [`data`]: JSONL datasets, tokenization and a seeded synthetic review
//!   generator with four restaurant-style concepts.
//! - [`model`]: parameters, masks, the masked decision pathway and checkpoints.
//! - [`training`]: vanilla / independent / sequential / joint strategies and Adam.
//! - [`pruning`]: dampened empirical Fisher blocks and second-order
//!   (optimal brain surgeon) scores used to carve one subnetwork per concept.
//! - [`intervention`]: oracle concept overrides and saliency-driven drop/grow
//!   edits of a concept mask at inference time.
//! - [`explain`]: token saliency, mask statistics and concept contributions.
//! - [`evaluation`]: accuracy and macro-F1.
//!
//! Everything is computed in `f64` with hand-derived gradients for the fixed
//! graph (see [`diffcore`]), and every routine is deterministic given a seed.

pub mod cli;
pub mod data;
pub mod diffcore;
pub mod error;
pub mod evaluation;
pub mod explain;
pub mod intervention;
pub mod model;
pub mod pruning;
pub mod rng;
pub mod training;

pub use error::{Error, Result};

#[cfg(test)]
pub(crate) mod testutil;
