//! Spectral super-resolution and quasi-dense surface reconstruction for
//! endoscopic imaging.
//!
//! The crate recovers dense 24-band multispectral stacks from RGB frames,
//! optionally refined by sparse hyperspectral samples, and reconstructs
//! tissue surfaces by fusing two-view structure-from-motion with
//! structured-light triangulation for metric scale.

pub mod tensorcore;
pub mod dataset;
pub mod models;
pub mod training;
pub mod geometry;
pub mod overlay;

pub use dataset::{CameraResponse, DensityMap, Sample, SpectralStack, SpotSet};
pub use geometry::{PinholeCamera, PointCloud, Pose, ProbeRig};
pub use models::{ArchConfig, ArchId, NetworkParams};
pub use tensorcore::Tensor;
pub use training::{EvalReport, PsnrMode, TrainConfig};
