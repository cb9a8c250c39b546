//! Dense linear algebra and exact gradients for the fixed model graph.

pub mod gradcheck;
pub mod graph;
pub mod linalg;
mod ops;
mod param;

pub use gradcheck::{central_difference, finite_difference_check, FdReport};
pub use graph::{CompiledPathway, ForwardTrace, GradRecord, Upstream};
pub use linalg::{spd_inverse, Cholesky};
pub use ops::{
    affine, argmax, dot, log_softmax, sigmoid, sigmoid_scalar, softmax, softmax_cross_entropy,
    softmax_cross_entropy_grad, Matrix,
};
pub use param::{BlockInfo, ParamVector};

#[cfg(test)]
mod tests;
