//! Model 1 (RGB to 24-band spectral upscaler with a residual HFE block) and
//! Model 2 (Model 1 plus a merge stage fed by sparse hyperspectral samples).

mod arch;
mod network;
mod params;

pub use arch::{ArchConfig, ArchId, MergeDensity, UPSCALE_LAYERS};
pub use network::{
    core_forward, model1_forward_pixels, model1_loss_grad, model1_predict, model2_loss_grad,
    model2_predict, CoreTrace, Model2Inputs,
};
pub use params::{
    build_model1, build_model2, init_model2_from, layer_names, load_params, load_params_checked,
    params_payload_path, save_params, NetworkParams, ParamEntry, MERGE_PREFIX, MODEL1_PREFIX,
};

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::tensorcore::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid architecture: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("parameters are for {actual:?}, operation needs {expected:?}")]
    ArchMismatch { expected: ArchId, actual: ArchId },
    #[error("input has {actual} channels, expected {expected}")]
    Channels { expected: usize, actual: usize },
    #[error("input dimensions differ: {0}")]
    Dims(String),
    #[error("no parameter matches prefix {prefix:?}; valid prefixes: {valid:?}")]
    NoSuchPrefix { prefix: String, valid: Vec<String> },
    #[error("architecture digest mismatch: expected {expected}, found {actual}")]
    DigestMismatch { expected: String, actual: String },
    #[error("parameter payload holds {actual} bytes, manifest needs {expected}")]
    Truncated { expected: usize, actual: usize },
    #[error("parameter layout: {0}")]
    Layout(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ModelError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ModelError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
