use serde::{Deserialize, Serialize};

use super::DatasetError;

/// An M×N×C image cube stored band-sequentially (`data[c][y][x]`).
///
/// Values are clamped into `[0, 255]` on construction; wavelengths must be
/// strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralStack {
    width: usize,
    height: usize,
    wavelengths_nm: Vec<f64>,
    data: Vec<f32>,
}

pub const VALUE_MAX: f32 = 255.0;

pub fn check_wavelengths(wavelengths: &[f64]) -> Result<(), DatasetError> {
    if wavelengths.is_empty() {
        return Err(DatasetError::Invalid("stack needs at least one band".into()));
    }
    if wavelengths.iter().any(|w| !w.is_finite()) {
        return Err(DatasetError::Invalid("non-finite wavelength".into()));
    }
    if let Some(i) = wavelengths.windows(2).position(|w| w[1] <= w[0]) {
        return Err(DatasetError::NonMonotoneWavelengths {
            index: i + 1,
            previous: wavelengths[i],
            value: wavelengths[i + 1],
        });
    }
    Ok(())
}

impl SpectralStack {
    pub fn new(
        width: usize,
        height: usize,
        wavelengths_nm: Vec<f64>,
        mut data: Vec<f32>,
    ) -> Result<Self, DatasetError> {
        if width == 0 || height == 0 {
            return Err(DatasetError::Invalid(format!(
                "stack dimensions must be positive, got {width}x{height}"
            )));
        }
        check_wavelengths(&wavelengths_nm)?;
        let expected = width * height * wavelengths_nm.len();
        if data.len() != expected {
            return Err(DatasetError::SizeMismatch {
                expected,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(DatasetError::Invalid("stack contains non-finite values".into()));
        }
        for v in &mut data {
            *v = v.clamp(0.0, VALUE_MAX);
        }
        Ok(Self {
            width,
            height,
            wavelengths_nm,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize, wavelengths_nm: Vec<f64>) -> Result<Self, DatasetError> {
        let n = width * height * wavelengths_nm.len();
        Self::new(width, height, wavelengths_nm, vec![0.0; n])
    }

    /// Builds a stack from pixel-major samples (`pixels[y*width + x][c]`).
    pub fn from_pixels(
        width: usize,
        height: usize,
        wavelengths_nm: Vec<f64>,
        pixels: &[f32],
    ) -> Result<Self, DatasetError> {
        let c = wavelengths_nm.len();
        let plane = width * height;
        if pixels.len() != plane * c {
            return Err(DatasetError::SizeMismatch {
                expected: plane * c,
                actual: pixels.len(),
            });
        }
        let mut data = vec![0f32; plane * c];
        for p in 0..plane {
            for b in 0..c {
                data[b * plane + p] = pixels[p * c + b];
            }
        }
        Self::new(width, height, wavelengths_nm, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.wavelengths_nm.len()
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn wavelengths_nm(&self) -> &[f64] {
        &self.wavelengths_nm
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn band(&self, c: usize) -> &[f32] {
        let plane = self.pixel_count();
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[c * self.pixel_count() + y * self.width + x]
    }

    pub fn spectrum(&self, x: usize, y: usize) -> Vec<f32> {
        (0..self.channels()).map(|c| self.get(x, y, c)).collect()
    }

    /// Pixel-major copy of the data (`out[p * C + c]`).
    pub fn to_pixels(&self) -> Vec<f32> {
        let (plane, c) = (self.pixel_count(), self.channels());
        let mut out = vec![0f32; plane * c];
        for b in 0..c {
            for (p, &v) in self.band(b).iter().enumerate() {
                out[p * c + b] = v;
            }
        }
        out
    }

    pub fn same_dims(&self, other: &SpectralStack) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn map_pixels(&self, width: usize, height: usize, src: impl Fn(usize, usize) -> (usize, usize)) -> SpectralStack {
        let plane = width * height;
        let mut data = vec![0f32; plane * self.channels()];
        for y in 0..height {
            for x in 0..width {
                let (sx, sy) = src(x, y);
                for c in 0..self.channels() {
                    data[c * plane + y * width + x] = self.get(sx, sy, c);
                }
            }
        }
        SpectralStack {
            width,
            height,
            wavelengths_nm: self.wavelengths_nm.clone(),
            data,
        }
    }
}

/// Default band grid: 24 bands from 460 nm to 690 nm in 10 nm steps.
pub fn default_wavelengths() -> Vec<f64> {
    (0..24).map(|i| 460.0 + 10.0 * i as f64).collect()
}

/// M×N map in `[0, 1]` marking where hyperspectral samples exist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityMap {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl DensityMap {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, DatasetError> {
        if data.len() != width * height {
            return Err(DatasetError::SizeMismatch {
                expected: width * height,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(DatasetError::Invalid("density values must lie in [0, 1]".into()));
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// `1 - D`, the RGB density map paired with a hyperspectral one.
    pub fn complement(&self) -> DensityMap {
        DensityMap {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| 1.0 - v).collect(),
        }
    }

    /// Single-band stack view (values in `[0, 1]`), used for file storage.
    pub fn to_stack(&self) -> SpectralStack {
        SpectralStack::new(self.width, self.height, vec![0.0], self.data.clone())
            .expect("density map dims are valid")
    }

    pub fn from_stack(stack: &SpectralStack) -> Result<Self, DatasetError> {
        if stack.channels() != 1 {
            return Err(DatasetError::ChannelMismatch {
                expected: 1,
                actual: stack.channels(),
            });
        }
        Self::new(stack.width(), stack.height(), stack.data().to_vec())
    }

    pub(crate) fn map_pixels(&self, width: usize, height: usize, src: impl Fn(usize, usize) -> (usize, usize)) -> DensityMap {
        let mut data = vec![0f32; width * height];
        for y in 0..height {
            for x in 0..width {
                let (sx, sy) = src(x, y);
                data[y * width + x] = self.get(sx, sy);
            }
        }
        DensityMap { width, height, data }
    }
}
