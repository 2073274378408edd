//! Synthetic multispectral scenes for desk-scale experiments.
//!
//! Each stack mixes a few smooth endmember spectra with spatially smooth
//! abundance fields, then derives RGB, a spot pattern, the density map and
//! the sparse stack exactly as for recorded data.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    make_density_map, make_sparse_stack, synthesize_rgb, CameraResponse, DatasetError, Sample,
    SpectralStack, Spot, SpotSet,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub wavelengths_nm: Vec<f64>,
    /// Seed of the endmember library; different values model different
    /// tissue sources.
    pub library_seed: u64,
    pub library_size: usize,
    pub min_endmembers: usize,
    pub max_endmembers: usize,
    /// Largest allowed difference between adjacent bands of any spectrum.
    pub max_band_step: f32,
    pub sigma_px: f64,
    pub sparse_threshold: f32,
    pub spot_spacing_px: f64,
    pub spot_jitter_px: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            wavelengths_nm: super::default_wavelengths(),
            library_seed: 0,
            library_size: 8,
            min_endmembers: 3,
            max_endmembers: 5,
            max_band_step: 60.0,
            sigma_px: 2.0,
            sparse_threshold: 0.05,
            spot_spacing_px: 6.0,
            spot_jitter_px: 1.0,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<(), DatasetError> {
        super::stack::check_wavelengths(&self.wavelengths_nm)?;
        if self.min_endmembers == 0
            || self.min_endmembers > self.max_endmembers
            || self.max_endmembers > self.library_size
        {
            return Err(DatasetError::Invalid(format!(
                "endmember counts {}..={} must fit a library of {}",
                self.min_endmembers, self.max_endmembers, self.library_size
            )));
        }
        if !(self.spot_spacing_px > 0.0) || !(self.sigma_px > 0.0) {
            return Err(DatasetError::Invalid("spot spacing and sigma must be positive".into()));
        }
        Ok(())
    }
}

// Gaussian bump parameter ranges. A bump of amplitude A and width s changes
// by at most A / (s sqrt(e)) per nm, so A <= 150 and s >= 35 keep two
// bumps under 60 per 10 nm band step.
const BUMP_AMPLITUDE: (f64, f64) = (-70.0, 150.0);
const BUMP_WIDTH_NM: (f64, f64) = (35.0, 80.0);
const SPECTRUM_FLOOR: f64 = 8.0;
const SPECTRUM_CEIL: f64 = 235.0;

/// Smooth endmember spectra on the configured band grid.
pub fn endmember_library(cfg: &SyntheticConfig) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.library_seed ^ 0x5eed_11b7);
    let (lo, hi) = (
        cfg.wavelengths_nm[0],
        cfg.wavelengths_nm[cfg.wavelengths_nm.len() - 1],
    );
    (0..cfg.library_size)
        .map(|_| {
            let base = rng.gen_range(40.0..110.0);
            let bumps: Vec<(f64, f64, f64)> = (0..2)
                .map(|_| {
                    (
                        rng.gen_range(BUMP_AMPLITUDE.0..BUMP_AMPLITUDE.1),
                        rng.gen_range(lo - 20.0..hi + 20.0),
                        rng.gen_range(BUMP_WIDTH_NM.0..BUMP_WIDTH_NM.1),
                    )
                })
                .collect();
            cfg.wavelengths_nm
                .iter()
                .map(|&l| {
                    let v: f64 = base
                        + bumps
                            .iter()
                            .map(|(a, mu, s)| a * (-(l - mu).powi(2) / (2.0 * s * s)).exp())
                            .sum::<f64>();
                    v.clamp(SPECTRUM_FLOOR, SPECTRUM_CEIL)
                })
                .collect()
        })
        .collect()
}

/// Positive smooth field built from a few Gaussian blobs.
fn smooth_field(rng: &mut ChaCha8Rng, width: usize, height: usize) -> Vec<f64> {
    let scale = width.max(height) as f64;
    let blobs: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.gen_range(-0.2 * width as f64..1.2 * width as f64),
                rng.gen_range(-0.2 * height as f64..1.2 * height as f64),
                rng.gen_range(scale / 6.0..scale / 2.0),
                rng.gen_range(0.2..1.0),
            )
        })
        .collect();
    let floor = rng.gen_range(0.02..0.15);
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let v: f64 = blobs
                .iter()
                .map(|(cx, cy, s, a)| {
                    let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                    a * (-d2 / (2.0 * s * s)).exp()
                })
                .sum();
            out.push(floor + v);
        }
    }
    out
}

/// Jittered grid of spots, each tagged with a wavelength cycling through the
/// band grid (the spectrally encoded pattern).
pub fn spot_pattern(
    rng: &mut ChaCha8Rng,
    width: usize,
    height: usize,
    cfg: &SyntheticConfig,
) -> Result<SpotSet, DatasetError> {
    let sp = cfg.spot_spacing_px;
    let mut spots = Vec::new();
    let mut gy = sp / 2.0;
    let mut id = 0u32;
    while gy <= height as f64 - 1.0 {
        let mut gx = sp / 2.0;
        while gx <= width as f64 - 1.0 {
            let j = cfg.spot_jitter_px;
            let u = (gx + rng.gen_range(-j..=j)).clamp(0.0, width as f64 - 1.0);
            let v = (gy + rng.gen_range(-j..=j)).clamp(0.0, height as f64 - 1.0);
            let wl = cfg.wavelengths_nm[id as usize % cfg.wavelengths_nm.len()];
            spots.push(Spot { id, u, v, wavelength_nm: wl });
            id += 1;
            gx += sp;
        }
        gy += sp;
    }
    SpotSet::new(width, height, spots)
}

fn stack_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_add(0xA076_1D64_78BD_642F)
}

/// One synthetic ground-truth stack with its spot pattern.
pub fn synthetic_stack(
    library: &[Vec<f64>],
    width: usize,
    height: usize,
    seed: u64,
    cfg: &SyntheticConfig,
) -> Result<(SpectralStack, SpotSet), DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.gen_range(cfg.min_endmembers..=cfg.max_endmembers);
    let picked = sample(&mut rng, library.len(), m).into_vec();
    let gains: Vec<f64> = (0..m).map(|_| rng.gen_range(0.9..1.05)).collect();
    let fields: Vec<Vec<f64>> = (0..m).map(|_| smooth_field(&mut rng, width, height)).collect();
    let shading = smooth_field(&mut rng, width, height);
    let shade_max = shading.iter().cloned().fold(f64::MIN, f64::max);
    let c = cfg.wavelengths_nm.len();
    let plane = width * height;
    let mut data = vec![0f32; plane * c];
    for p in 0..plane {
        let total: f64 = fields.iter().map(|f| f[p]).sum();
        let shade = 0.6 + 0.4 * shading[p] / shade_max;
        for b in 0..c {
            let mut v = 0.0;
            for (i, &e) in picked.iter().enumerate() {
                v += fields[i][p] / total * gains[i] * library[e][b];
            }
            data[b * plane + p] = (shade * v) as f32;
        }
    }
    let stack = SpectralStack::new(width, height, cfg.wavelengths_nm.clone(), data)?;
    let spots = spot_pattern(&mut rng, width, height, cfg)?;
    Ok((stack, spots))
}

/// Builds `n_stacks` samples of size `width`×`height`. Deterministic per
/// `(seed, cfg)`; stacks are generated in parallel.
pub fn generate_synthetic_dataset(
    n_stacks: usize,
    (width, height): (usize, usize),
    seed: u64,
    cfg: &SyntheticConfig,
) -> Result<Vec<Sample>, DatasetError> {
    cfg.validate()?;
    if width == 0 || height == 0 {
        return Err(DatasetError::Invalid(format!(
            "dimensions must be positive, got {width}x{height}"
        )));
    }
    let library = endmember_library(cfg);
    let camera = CameraResponse::default_for(&cfg.wavelengths_nm)?;
    (0..n_stacks)
        .into_par_iter()
        .map(|i| {
            let (hsi, spots) = synthetic_stack(&library, width, height, stack_seed(seed, i), cfg)?;
            let rgb = synthesize_rgb(&hsi, &camera)?;
            let density = make_density_map(&spots, cfg.sigma_px)?;
            let sparse = make_sparse_stack(&hsi, &density, cfg.sparse_threshold)?;
            Ok(Sample {
                id: format!("stack_{i:04}"),
                hsi,
                rgb,
                density,
                sparse,
                spots,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_in_range_and_smooth() {
        let cfg = SyntheticConfig::default();
        let data = generate_synthetic_dataset(3, (16, 12), 5, &cfg).unwrap();
        for s in &data {
            assert_eq!(s.hsi.channels(), 24);
            for y in 0..12 {
                for x in 0..16 {
                    let spec = s.hsi.spectrum(x, y);
                    assert!(spec.iter().all(|v| (0.0..=255.0).contains(v)));
                    for w in spec.windows(2) {
                        assert!((w[1] - w[0]).abs() <= cfg.max_band_step);
                    }
                }
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SyntheticConfig::default();
        let a = generate_synthetic_dataset(2, (10, 10), 3, &cfg).unwrap();
        let b = generate_synthetic_dataset(2, (10, 10), 3, &cfg).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_dataset(2, (10, 10), 4, &cfg).unwrap();
        assert_ne!(a[0].hsi, c[0].hsi);
    }

    #[test]
    fn stored_rgb_matches_recomputed() {
        let cfg = SyntheticConfig::default();
        let cam = CameraResponse::default_for(&cfg.wavelengths_nm).unwrap();
        for s in generate_synthetic_dataset(2, (8, 8), 1, &cfg).unwrap() {
            assert_eq!(synthesize_rgb(&s.hsi, &cam).unwrap(), s.rgb);
        }
    }

    #[test]
    fn libraries_differ_by_seed() {
        let a = endmember_library(&SyntheticConfig::default());
        let b = endmember_library(&SyntheticConfig {
            library_seed: 1,
            ..Default::default()
        });
        assert_ne!(a, b);
    }
}
