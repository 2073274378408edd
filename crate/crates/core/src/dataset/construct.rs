//! Camera responses, spot sets and the derived inputs of the merge model:
//! synthetic RGB, hyperspectral density maps and sparse stacks.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetError, DensityMap, SpectralStack};

/// 3×C spectral sensitivity of an RGB camera, rows normalized to sum 1 and
/// ordered blue, green, red (increasing centre wavelength).
#[derive(Debug, Clone, PartialEq)]
pub struct CameraResponse {
    wavelengths_nm: Vec<f64>,
    rows: [Vec<f64>; 3],
    pub source_note: String,
}

impl CameraResponse {
    pub fn new(wavelengths_nm: Vec<f64>, rows: [Vec<f64>; 3], source_note: impl Into<String>) -> Result<Self, DatasetError> {
        super::stack::check_wavelengths(&wavelengths_nm)?;
        let mut rows = rows;
        for (k, row) in rows.iter_mut().enumerate() {
            if row.len() != wavelengths_nm.len() {
                return Err(DatasetError::ChannelMismatch {
                    expected: wavelengths_nm.len(),
                    actual: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(DatasetError::Invalid(format!(
                    "camera response row {k} has negative or non-finite weights"
                )));
            }
            let sum: f64 = row.iter().sum();
            if sum <= 0.0 {
                return Err(DatasetError::Invalid(format!("camera response row {k} is all zero")));
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let out = Self {
            wavelengths_nm,
            rows,
            source_note: source_note.into(),
        };
        let c = out.channel_centroids_nm();
        if !(c[0] < c[1] && c[1] < c[2]) {
            return Err(DatasetError::Invalid(format!(
                "camera response rows must be ordered from shortest to longest wavelength (centroids {c:?})"
            )));
        }
        Ok(out)
    }

    /// Sensitivity-weighted centre wavelength of each row; used as the
    /// wavelength label of the corresponding RGB channel.
    pub fn channel_centroids_nm(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().zip(&self.wavelengths_nm).map(|(w, l)| w * l).sum())
            .collect()
    }

    /// Smooth Gaussian R/G/B sensitivities evaluated on `wavelengths_nm`.
    pub fn default_for(wavelengths_nm: &[f64]) -> Result<Self, DatasetError> {
        let gauss = |center: f64, sigma: f64| -> Vec<f64> {
            wavelengths_nm
                .iter()
                .map(|w| (-(w - center).powi(2) / (2.0 * sigma * sigma)).exp())
                .collect()
        };
        Self::new(
            wavelengths_nm.to_vec(),
            [gauss(470.0, 30.0), gauss(540.0, 35.0), gauss(605.0, 35.0)],
            "synthetic gaussian rgb response",
        )
    }

    pub fn wavelengths_nm(&self) -> &[f64] {
        &self.wavelengths_nm
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k]
    }

    pub fn columns(&self) -> usize {
        self.wavelengths_nm.len()
    }

    /// Reads the CSV form: one row of wavelengths, then three weight rows.
    pub fn from_csv_reader(reader: impl Read, source_note: impl Into<String>) -> Result<Self, DatasetError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|f| f.parse::<f64>().map_err(|_| DatasetError::Invalid(format!("bad number '{f}' in camera response"))))
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        if rows.len() != 4 {
            return Err(DatasetError::Invalid(format!(
                "camera response needs a wavelength row and 3 weight rows, got {} rows",
                rows.len()
            )));
        }
        let mut it = rows.into_iter();
        let wl = it.next().unwrap_or_default();
        let r = [it.next().unwrap_or_default(), it.next().unwrap_or_default(), it.next().unwrap_or_default()];
        Self::new(wl, r, source_note)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| DatasetError::io(path, e))?;
        Self::from_csv_reader(f, path.display().to_string())
    }

    pub fn to_csv_string(&self) -> String {
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",");
        let mut out = fmt(&self.wavelengths_nm);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&fmt(row));
            out.push('\n');
        }
        out
    }
}

/// One detected structured-light spot in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spot {
    pub id: u32,
    pub u: f64,
    pub v: f64,
    pub wavelength_nm: f64,
}

/// Spot locations inside a `width`×`height` image; ids are unique.
#[derive(Debug, Clone, PartialEq)]
pub struct SpotSet {
    width: usize,
    height: usize,
    spots: Vec<Spot>,
}

impl SpotSet {
    pub fn new(width: usize, height: usize, spots: Vec<Spot>) -> Result<Self, DatasetError> {
        let mut ids = BTreeSet::new();
        for s in &spots {
            let inside = s.u.is_finite()
                && s.v.is_finite()
                && s.u >= 0.0
                && s.v >= 0.0
                && s.u <= (width as f64 - 1.0)
                && s.v <= (height as f64 - 1.0);
            if !inside {
                return Err(DatasetError::SpotOutside { id: s.id, u: s.u, v: s.v });
            }
            if !ids.insert(s.id) {
                return Err(DatasetError::Invalid(format!("duplicate spot id {}", s.id)));
            }
        }
        Ok(Self { width, height, spots })
    }

    pub fn spots(&self) -> &[Spot] {
        &self.spots
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_empty(&self) -> bool {
        self.spots.is_empty()
    }

    pub fn len(&self) -> usize {
        self.spots.len()
    }

    /// CSV with header `id,u,v,wavelength_nm`.
    pub fn from_csv_reader(reader: impl Read, width: usize, height: usize) -> Result<Self, DatasetError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected = ["id", "u", "v", "wavelength_nm"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(DatasetError::Invalid(format!(
                "spot CSV header must be {}, got {}",
                expected.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let spots = rdr
            .deserialize::<Spot>()
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(width, height, spots)
    }

    pub fn load_csv(path: impl AsRef<Path>, width: usize, height: usize) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| DatasetError::io(path, e))?;
        Self::from_csv_reader(f, width, height)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("id,u,v,wavelength_nm\n");
        for s in &self.spots {
            out.push_str(&format!("{},{},{},{}\n", s.id, s.u, s.v, s.wavelength_nm));
        }
        out
    }

    pub(crate) fn map_coords(&self, width: usize, height: usize, f: impl Fn(f64, f64) -> Option<(f64, f64)>) -> SpotSet {
        let spots = self
            .spots
            .iter()
            .filter_map(|s| {
                let (u, v) = f(s.u, s.v)?;
                let inside = u >= 0.0 && v >= 0.0 && u <= width as f64 - 1.0 && v <= height as f64 - 1.0;
                inside.then_some(Spot { u, v, ..*s })
            })
            .collect();
        SpotSet { width, height, spots }
    }
}

/// `R_k = sum_c h[k][c] * H[c]` per pixel, clamped to `[0, 255]`.
pub fn synthesize_rgb(hsi: &SpectralStack, response: &CameraResponse) -> Result<SpectralStack, DatasetError> {
    if response.columns() != hsi.channels() {
        return Err(DatasetError::ChannelMismatch {
            expected: hsi.channels(),
            actual: response.columns(),
        });
    }
    let plane = hsi.pixel_count();
    let mut data = vec![0f32; 3 * plane];
    for k in 0..3 {
        let row = response.row(k);
        let out = &mut data[k * plane..(k + 1) * plane];
        for (p, o) in out.iter_mut().enumerate() {
            let mut acc = 0f64;
            for (c, &w) in row.iter().enumerate() {
                acc += w * f64::from(hsi.band(c)[p]);
            }
            *o = acc as f32;
        }
    }
    SpectralStack::new(hsi.width(), hsi.height(), response.channel_centroids_nm(), data)
}

/// Gaussian bump value of the nearest spot at `(u, v)`: `max_s exp(-d^2 / 2σ^2)`.
pub fn density_at(spots: &[Spot], sigma_px: f64, u: f64, v: f64) -> f64 {
    let inv = 1.0 / (2.0 * sigma_px * sigma_px);
    spots
        .iter()
        .map(|s| {
            let d2 = (u - s.u).powi(2) + (v - s.v).powi(2);
            (-d2 * inv).exp()
        })
        .fold(0.0, f64::max)
}

pub fn make_density_map(spots: &SpotSet, sigma_px: f64) -> Result<DensityMap, DatasetError> {
    if !(sigma_px > 0.0 && sigma_px.is_finite()) {
        return Err(DatasetError::Invalid(format!("sigma must be positive, got {sigma_px}")));
    }
    let (w, h) = (spots.width(), spots.height());
    let mut data = vec![0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            data[y * w + x] = density_at(spots.spots(), sigma_px, x as f64, y as f64) as f32;
        }
    }
    DensityMap::new(w, h, data)
}

/// `H_s = D ⊙ H`, zeroed wherever `D < threshold`.
pub fn make_sparse_stack(hsi: &SpectralStack, density: &DensityMap, threshold: f32) -> Result<SpectralStack, DatasetError> {
    if hsi.width() != density.width() || hsi.height() != density.height() {
        return Err(DatasetError::DimMismatch {
            expected: (hsi.width(), hsi.height()),
            actual: (density.width(), density.height()),
        });
    }
    let plane = hsi.pixel_count();
    let mut data = vec![0f32; hsi.data().len()];
    for c in 0..hsi.channels() {
        let band = hsi.band(c);
        for p in 0..plane {
            let d = density.data()[p];
            if d >= threshold {
                data[c * plane + p] = d * band[p];
            }
        }
    }
    SpectralStack::new(hsi.width(), hsi.height(), hsi.wavelengths_nm().to_vec(), data)
}
