use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::OverlayError;
use crate::dataset::SpectralStack;
use crate::training::opt_inf;

/// Molar extinction spectra of oxygenated and deoxygenated haemoglobin.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtinctionTable {
    wavelengths_nm: Vec<f64>,
    eps_hbo2: Vec<f64>,
    eps_hb: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct Row {
    wavelength_nm: f64,
    eps_hbo2: f64,
    eps_hb: f64,
}

impl ExtinctionTable {
    pub fn new(wavelengths_nm: Vec<f64>, eps_hbo2: Vec<f64>, eps_hb: Vec<f64>) -> Result<Self, OverlayError> {
        if wavelengths_nm.is_empty() || eps_hbo2.len() != wavelengths_nm.len() || eps_hb.len() != wavelengths_nm.len() {
            return Err(OverlayError::Invalid("extinction columns must be non-empty and equally long".into()));
        }
        if wavelengths_nm.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(OverlayError::Invalid("extinction wavelengths must increase strictly".into()));
        }
        if eps_hbo2.iter().chain(&eps_hb).any(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(OverlayError::Invalid("extinction coefficients must be positive".into()));
        }
        Ok(Self {
            wavelengths_nm,
            eps_hbo2,
            eps_hb,
        })
    }

    /// CSV with header `wavelength_nm,eps_hbo2,eps_hb`.
    pub fn from_csv_reader(reader: impl Read) -> Result<Self, OverlayError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let rows = rdr.deserialize::<Row>().collect::<Result<Vec<_>, _>>()?;
        Self::new(
            rows.iter().map(|r| r.wavelength_nm).collect(),
            rows.iter().map(|r| r.eps_hbo2).collect(),
            rows.iter().map(|r| r.eps_hb).collect(),
        )
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self, OverlayError> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|source| OverlayError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_csv_reader(f)
    }

    /// Linear interpolation onto `grid`; every grid wavelength must lie in
    /// the table's range.
    pub fn on_grid(&self, grid: &[f64]) -> Result<(Vec<f64>, Vec<f64>), OverlayError> {
        let (lo, hi) = (self.wavelengths_nm[0], *self.wavelengths_nm.last().expect("non-empty"));
        let mut a = Vec::with_capacity(grid.len());
        let mut b = Vec::with_capacity(grid.len());
        for &w in grid {
            if !(w >= lo && w <= hi) {
                return Err(OverlayError::OutOfRange {
                    wavelength_nm: w,
                    min_nm: lo,
                    max_nm: hi,
                });
            }
            let k = self.wavelengths_nm.partition_point(|&x| x < w);
            if self.wavelengths_nm[k] == w {
                a.push(self.eps_hbo2[k]);
                b.push(self.eps_hb[k]);
            } else {
                let (w0, w1) = (self.wavelengths_nm[k - 1], self.wavelengths_nm[k]);
                let f = (w - w0) / (w1 - w0);
                a.push(self.eps_hbo2[k - 1] + f * (self.eps_hbo2[k] - self.eps_hbo2[k - 1]));
                b.push(self.eps_hb[k - 1] + f * (self.eps_hb[k] - self.eps_hb[k - 1]));
            }
        }
        Ok((a, b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sao2Config {
    /// Flat-field reference intensity `I₀`.
    pub i0: f64,
    /// `c₁ + c₂` below this marks a pixel without blood signal.
    pub min_concentration: f64,
}

impl Default for Sao2Config {
    fn default() -> Self {
        Self {
            i0: 255.0,
            min_concentration: 1e-9,
        }
    }
}

/// Fit of `A(λ) = c₁ εHbO2 + c₂ εHb + c₃` with `c₁, c₂ ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Unmixing {
    pub c: [f64; 3],
    /// RMS absorbance residual.
    pub residual: f64,
    pub sao2: Option<f64>,
}

fn least_squares(cols: &[&[f64]], y: &[f64]) -> Option<(Vec<f64>, f64)> {
    let n = y.len();
    if cols.is_empty() {
        return Some((Vec::new(), y.iter().map(|v| v * v).sum()));
    }
    let a = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    let yv = DVector::from_column_slice(y);
    let x = a.clone().svd(true, true).solve(&yv, 1e-12).ok()?;
    let r = (&a * &x - &yv).norm_squared();
    Some((x.iter().copied().collect(), r))
}

/// Exact constrained least squares by enumerating the active sets of the
/// two non-negative coefficients and keeping the best feasible one.
pub fn unmix(absorbance: &[f64], eps_hbo2: &[f64], eps_hb: &[f64], min_concentration: f64) -> Unmixing {
    let ones = vec![1.0; absorbance.len()];
    let mut best: Option<([f64; 3], f64)> = None;
    for (free1, free2) in [(true, true), (true, false), (false, true), (false, false)] {
        let mut cols: Vec<&[f64]> = Vec::new();
        if free1 {
            cols.push(eps_hbo2);
        }
        if free2 {
            cols.push(eps_hb);
        }
        cols.push(&ones);
        let Some((x, r)) = least_squares(&cols, absorbance) else { continue };
        let mut it = x.into_iter();
        let c1 = if free1 { it.next().unwrap_or(0.0) } else { 0.0 };
        let c2 = if free2 { it.next().unwrap_or(0.0) } else { 0.0 };
        let c3 = it.next().unwrap_or(0.0);
        if c1 < 0.0 || c2 < 0.0 {
            continue;
        }
        if best.map_or(true, |b| r < b.1) {
            best = Some(([c1, c2, c3], r));
        }
    }
    let (c, r) = best.unwrap_or(([0.0; 3], f64::INFINITY));
    let total = c[0] + c[1];
    Unmixing {
        c,
        residual: (r / absorbance.len().max(1) as f64).sqrt(),
        sao2: (total > min_concentration).then(|| (c[0] / total).clamp(0.0, 1.0)),
    }
}

/// Intensities `I₀ exp(−A)` for the given concentrations.
pub fn forward_intensity(c: [f64; 3], eps_hbo2: &[f64], eps_hb: &[f64], i0: f64) -> Vec<f64> {
    eps_hbo2
        .iter()
        .zip(eps_hb)
        .map(|(a, b)| i0 * (-(c[0] * a + c[1] * b + c[2])).exp())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sao2Map {
    pub width: usize,
    pub height: usize,
    /// `None` where the pixel has no usable signal.
    pub sao2: Vec<Option<f64>>,
    pub residual: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sao2Summary {
    pub defined_pixels: usize,
    pub undefined_pixels: usize,
    #[serde(with = "opt_inf")]
    pub mean: Option<f64>,
    #[serde(with = "opt_inf")]
    pub min: Option<f64>,
    #[serde(with = "opt_inf")]
    pub max: Option<f64>,
}

impl Sao2Map {
    pub fn summary(&self) -> Sao2Summary {
        let d: Vec<f64> = self.sao2.iter().flatten().copied().collect();
        let agg = |f: fn(f64, f64) -> f64| d.iter().copied().reduce(f);
        Sao2Summary {
            defined_pixels: d.len(),
            undefined_pixels: self.sao2.len() - d.len(),
            mean: (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64),
            min: agg(f64::min),
            max: agg(f64::max),
        }
    }

    /// Values with `NaN` for undefined pixels.
    pub fn values(&self) -> Vec<f64> {
        self.sao2.iter().map(|v| v.unwrap_or(f64::NAN)).collect()
    }
}

/// Per-pixel modified Beer-Lambert unmixing with absorbance `−ln(I / I₀)`.
pub fn oxygen_saturation(msi: &SpectralStack, ext: &ExtinctionTable, cfg: &Sao2Config) -> Result<Sao2Map, OverlayError> {
    if !(cfg.i0 > 0.0 && cfg.i0.is_finite()) {
        return Err(OverlayError::Invalid(format!("reference intensity must be positive, got {}", cfg.i0)));
    }
    let (ea, eb) = ext.on_grid(msi.wavelengths_nm())?;
    let n = msi.pixel_count();
    let mut sao2 = Vec::with_capacity(n);
    let mut residual = Vec::with_capacity(n);
    for y in 0..msi.height() {
        for x in 0..msi.width() {
            let spec = msi.spectrum(x, y);
            if spec.iter().any(|&v| v <= 0.0) {
                sao2.push(None);
                residual.push(f64::NAN);
                continue;
            }
            let a: Vec<f64> = spec.iter().map(|&v| -(f64::from(v) / cfg.i0).ln()).collect();
            let u = unmix(&a, &ea, &eb, cfg.min_concentration);
            sao2.push(u.sao2);
            residual.push(u.residual);
        }
    }
    Ok(Sao2Map {
        width: msi.width(),
        height: msi.height(),
        sao2,
        residual,
    })
}
