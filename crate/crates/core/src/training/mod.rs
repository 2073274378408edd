//! Training loops for both models, PSNR metrics and maps, k-fold
//! cross-validation and the transfer-learning matrix.

mod eval;
mod psnr;
mod train;

pub use eval::{
    evaluate, evaluate_params, predict_samples, run_loocv, transfer_matrix, Aggregate, CvConfig, CvReport,
    EvalReport, FoldReport, StackScore, TransferTable, DEFAULT_SATURATION,
};
pub use psnr::{inf_f64, opt_inf, psnr, psnr_from_mse, psnr_map, vec_inf, MapSummary, PsnrMap, PsnrMode};
pub use train::{
    train_model1, train_model2, LogRow, Model2Outcome, StageSummary, TrainConfig, TrainLog, TrainOutcome,
};

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::models::{ArchId, ModelError, NetworkParams};
use crate::tensorcore::AdamError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("nothing to evaluate")]
    Empty,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("expected {expected:?} parameters, got {actual:?}")]
    Arch { expected: ArchId, actual: ArchId },
    #[error("{stage}: loss diverged at epoch {epoch}")]
    Diverged {
        stage: String,
        epoch: usize,
        /// Best parameters seen before the divergence.
        checkpoint: Box<NetworkParams>,
    },
    #[error("{stage}: non-finite loss at epoch {epoch}")]
    NonFinite { stage: String, epoch: usize },
    #[error("frozen tensor {0} changed during stage A")]
    FrozenChanged(String),
    #[error(transparent)]
    Adam(#[from] AdamError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}
