use log::warn;
use serde::{Deserialize, Serialize};

use super::OverlayError;
use crate::dataset::SpectralStack;

/// The clinical narrow-band pair: blue for superficial vessels, green for
/// deeper ones.
pub const NBI_DEFAULT_NM: [f64; 2] = [415.0, 540.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandPick {
    pub requested_nm: f64,
    pub index: usize,
    pub wavelength_nm: f64,
    pub substituted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NarrowBand {
    pub width: usize,
    pub height: usize,
    pub picks: Vec<BandPick>,
    /// Band data exactly as stored in the stack, one per pick.
    pub bands: Vec<Vec<f32>>,
}

/// Nearest stack band to each requested wavelength; ties go to the shorter
/// wavelength.
pub fn narrow_band(msi: &SpectralStack, requested_nm: &[f64]) -> Result<NarrowBand, OverlayError> {
    if requested_nm.is_empty() {
        return Err(OverlayError::Invalid("no narrow-band wavelength requested".into()));
    }
    let grid = msi.wavelengths_nm();
    let mut picks = Vec::with_capacity(requested_nm.len());
    let mut bands = Vec::with_capacity(requested_nm.len());
    for &req in requested_nm {
        if !req.is_finite() {
            return Err(OverlayError::Invalid(format!("requested wavelength {req}")));
        }
        let (index, &wavelength_nm) = grid
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - req).abs().total_cmp(&(b.1 - req).abs()).then(a.0.cmp(&b.0)))
            .expect("stacks have at least one band");
        let substituted = wavelength_nm != req;
        if substituted {
            warn!("no band at {req} nm; using {wavelength_nm} nm");
        }
        picks.push(BandPick {
            requested_nm: req,
            index,
            wavelength_nm,
            substituted,
        });
        bands.push(msi.band(index).to_vec());
    }
    Ok(NarrowBand {
        width: msi.width(),
        height: msi.height(),
        picks,
        bands,
    })
}

impl NarrowBand {
    /// False-color pixels: the last band drives red, the first drives blue
    /// and green (the second band drives green when there are three or more).
    pub fn composite(&self) -> Vec<[u8; 3]> {
        let n = self.bands.len();
        let (r, g, b) = match n {
            1 => (0, 0, 0),
            2 => (1, 0, 0),
            _ => (n - 1, 1, 0),
        };
        let to_u8 = |v: f32| v.round().clamp(0.0, 255.0) as u8;
        (0..self.width * self.height)
            .map(|i| [to_u8(self.bands[r][i]), to_u8(self.bands[g][i]), to_u8(self.bands[b][i])])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::default_wavelengths;

    fn ramp() -> SpectralStack {
        let data = (0..24 * 4).map(|i| (i % 200) as f32).collect();
        SpectralStack::new(2, 2, default_wavelengths(), data).unwrap()
    }

    #[test]
    fn grid_picks() {
        let nb = narrow_band(&ramp(), &NBI_DEFAULT_NM).unwrap();
        assert_eq!(nb.picks[1].index, 8);
        assert!(!nb.picks[1].substituted);
        assert_eq!((nb.picks[0].index, nb.picks[0].wavelength_nm, nb.picks[0].substituted), (0, 460.0, true));
        assert_eq!(nb.bands[1], ramp().band(8));
    }

    #[test]
    fn composite_routes_bands() {
        let nb = narrow_band(&ramp(), &NBI_DEFAULT_NM).unwrap();
        let c = nb.composite();
        assert_eq!(c[0], [32, 0, 0]);
        assert!(narrow_band(&ramp(), &[]).is_err());
    }
}
