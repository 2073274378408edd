//! Spectral stacks and everything derived from them: file I/O, synthetic
//! RGB, density maps, sparse stacks, augmentation, fold splits and a
//! synthetic scene generator.

mod augment;
mod construct;
mod folds;
mod io;
mod manifest;
mod stack;
mod synth;

use std::path::Path;

use thiserror::Error;

pub use augment::{augment, augment_sample, Transform};
pub use construct::{
    density_at, make_density_map, make_sparse_stack, synthesize_rgb, CameraResponse, Spot, SpotSet,
};
pub use folds::{split_folds, Fold};
pub use io::{load_stack, payload_path, save_stack, StackHeader};
pub use manifest::{
    load_dataset, load_sample, read_manifest, save_dataset, DatasetManifest, ManifestEntry, MANIFEST_FILE,
};
pub use stack::{default_wavelengths, DensityMap, SpectralStack, VALUE_MAX};
pub use synth::{endmember_library, generate_synthetic_dataset, spot_pattern, synthetic_stack, SyntheticConfig};

/// Ground truth plus the derived model inputs for one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// Ground-truth hyperspectral stack `H`.
    pub hsi: SpectralStack,
    /// RGB image `R = h * H`.
    pub rgb: SpectralStack,
    /// Hyperspectral sampling density `D_hsi`.
    pub density: DensityMap,
    /// Sparse stack `H_s`.
    pub sparse: SpectralStack,
    pub spots: SpotSet,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{0}")]
    Invalid(String),
    #[error("wavelengths must be strictly increasing: index {index} has {value} after {previous}")]
    NonMonotoneWavelengths { index: usize, previous: f64, value: f64 },
    #[error("payload holds {actual} values/bytes, expected {expected}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("expected {expected} channels, got {actual}")]
    ChannelMismatch { expected: usize, actual: usize },
    #[error("dimensions {actual:?} do not match {expected:?}")]
    DimMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("spot {id} at ({u}, {v}) lies outside the image")]
    SpotOutside { id: u32, u: f64, v: f64 },
    #[error("crop {crop:?} does not fit image {image:?}")]
    CropTooLarge {
        crop: (usize, usize),
        image: (usize, usize),
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl DatasetError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DatasetError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
