//! Dense tensor kernels, L2 loss and the Adam optimizer used to train the
//! spectral upscaling networks.

mod adam;
mod conv;
mod layer;
mod loss;
#[cfg(test)]
mod naive;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamError, AdamState};
pub use layer::{backward, forward, Cache, LayerKind, LayerParams, LayerSpec};
pub use loss::l2_loss;
pub use tensor::{Tensor, MAX_RANK};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("tensor rank {rank} outside 1..=4")]
    Rank { rank: usize },
    #[error("shape {shape:?} needs {expected} values, got {actual}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("axis {axis} missing from shape {shape:?}")]
    MissingAxis { axis: usize, shape: Vec<usize> },
    #[error("cannot reshape {from:?} into {to:?}")]
    Reshape { from: Vec<usize>, to: Vec<usize> },
    #[error("{layer:?}: axis {axis} expected extent {expected}, got {actual}")]
    ShapeMismatch {
        layer: LayerKind,
        axis: usize,
        expected: usize,
        actual: usize,
    },
    #[error("{layer:?}: expected rank {expected}, got {actual}")]
    RankMismatch {
        layer: LayerKind,
        expected: usize,
        actual: usize,
    },
    #[error("{layer:?}: expected {expected} inputs, got {actual}")]
    Arity {
        layer: LayerKind,
        expected: usize,
        actual: usize,
    },
    #[error("{layer:?}: missing {what}")]
    MissingParam { layer: LayerKind, what: &'static str },
    #[error("{layer:?}: {what} shape expected {expected:?}, got {actual:?}")]
    ParamShape {
        layer: LayerKind,
        what: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),
    #[error("stale or mismatched cache: {0}")]
    StaleCache(String),
}
