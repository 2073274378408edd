//! Narrow-band images and oxygen saturation from predicted stacks, and
//! their projection onto reconstructed surfaces.

mod drape;
mod nbi;
mod sao2;

use std::path::PathBuf;

use thiserror::Error;

pub use drape::{drape_colors, drape_overlay, ScalarMap};
pub use nbi::{narrow_band, BandPick, NarrowBand, NBI_DEFAULT_NM};
pub use sao2::{
    forward_intensity, oxygen_saturation, unmix, ExtinctionTable, Sao2Config, Sao2Map, Sao2Summary, Unmixing,
};

#[derive(Debug, Error)]
pub enum OverlayError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("wavelength {wavelength_nm} nm outside the extinction table range {min_nm}..{max_nm} nm")]
    OutOfRange { wavelength_nm: f64, min_nm: f64, max_nm: f64 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}
