//! Structured-light triangulation, two-view structure from motion and the
//! metric fusion of both.

mod camera;
mod cloud;
mod epipolar;
mod pipeline;
mod scale;
mod scene;
mod sl;
mod tracking;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use camera::{PinholeCamera, ProbeRig, SpotRay};
pub use cloud::{PointCloud, PointSource, ScaleStatus};
pub use epipolar::{
    epipolar_residual, essential_from_pairs, estimate_essential, pose_candidates, project_to_essential, recover_pose,
    sampson_distance, skew, triangulate_two_view, EssentialEstimate, Pose, PoseRecovery, RansacConfig,
    TriangulationMethod, TwoViewCloud, TwoViewDrop,
};
pub use pipeline::{reconstruct, PipelineConfig, Reconstruction, ReconstructionStats};
pub use scale::{average_sl, register_scale, ScaleConfig, ScaleFit};
pub use scene::{generate_scene, BearingQuadric, SceneConfig, SyntheticScene};
pub use sl::{triangulate_sl, SlConfig, SlDrop, SlReconstruction};
pub use tracking::{
    filter_correspondences, track_features, CornerDetector, Correspondence, CorrespondenceSet, FeatureDetector,
    FilterThresholds, FlowConfig, GrayImage, Keypoint, RejectReason,
};

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("insufficient correspondences: need {needed}, got {got}")]
    Insufficient { needed: usize, got: usize },
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("ambiguous pose: {0}")]
    Ambiguous(String),
    #[error("scale registration failed: {0}")]
    Registration(String),
    #[error("PLY line {line}: {msg}")]
    Ply { line: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl GeometryError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        GeometryError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, GeometryError> {
    let text = std::fs::read_to_string(path).map_err(|e| GeometryError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
