use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DatasetError, DensityMap, Sample, SpectralStack, SpotSet};

/// Geometric transform applied identically to every layer of a sample.
/// Spectra are carried per pixel untouched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    FlipHorizontal,
    FlipVertical,
    /// Quarter turn; output is `height`×`width`.
    Rotate90,
    Rotate180,
    Rotate270,
    Crop { x: usize, y: usize, width: usize, height: usize },
}

impl Transform {
    /// Output dimensions for a `width`×`height` input.
    pub fn output_dims(&self, width: usize, height: usize) -> Result<(usize, usize), DatasetError> {
        match *self {
            Transform::FlipHorizontal | Transform::FlipVertical | Transform::Rotate180 => Ok((width, height)),
            Transform::Rotate90 | Transform::Rotate270 => Ok((height, width)),
            Transform::Crop { x, y, width: cw, height: ch } => {
                if cw == 0 || ch == 0 || x + cw > width || y + ch > height {
                    return Err(DatasetError::CropTooLarge {
                        crop: (cw, ch),
                        image: (width, height),
                    });
                }
                Ok((cw, ch))
            }
        }
    }

    /// Source pixel for output pixel `(x, y)`.
    fn source(&self, width: usize, height: usize, x: usize, y: usize) -> (usize, usize) {
        match *self {
            Transform::FlipHorizontal => (width - 1 - x, y),
            Transform::FlipVertical => (x, height - 1 - y),
            Transform::Rotate90 => (width - 1 - y, x),
            Transform::Rotate180 => (width - 1 - x, height - 1 - y),
            Transform::Rotate270 => (y, height - 1 - x),
            Transform::Crop { x: cx, y: cy, .. } => (x + cx, y + cy),
        }
    }

    /// Forward map of a continuous coordinate, `None` when it leaves the output.
    fn forward(&self, width: usize, height: usize, u: f64, v: f64) -> Option<(f64, f64)> {
        let (w1, h1) = (width as f64 - 1.0, height as f64 - 1.0);
        Some(match *self {
            Transform::FlipHorizontal => (w1 - u, v),
            Transform::FlipVertical => (u, h1 - v),
            Transform::Rotate90 => (v, w1 - u),
            Transform::Rotate180 => (w1 - u, h1 - v),
            Transform::Rotate270 => (h1 - v, u),
            Transform::Crop { x, y, .. } => (u - x as f64, v - y as f64),
        })
    }

    pub fn apply_stack(&self, stack: &SpectralStack) -> Result<SpectralStack, DatasetError> {
        let (w, h) = (stack.width(), stack.height());
        let (ow, oh) = self.output_dims(w, h)?;
        Ok(stack.map_pixels(ow, oh, |x, y| self.source(w, h, x, y)))
    }

    pub fn apply_density(&self, map: &DensityMap) -> Result<DensityMap, DatasetError> {
        let (w, h) = (map.width(), map.height());
        let (ow, oh) = self.output_dims(w, h)?;
        Ok(map.map_pixels(ow, oh, |x, y| self.source(w, h, x, y)))
    }

    /// Spots leaving a crop window are dropped.
    pub fn apply_spots(&self, spots: &SpotSet) -> Result<SpotSet, DatasetError> {
        let (w, h) = (spots.width(), spots.height());
        let (ow, oh) = self.output_dims(w, h)?;
        Ok(spots.map_coords(ow, oh, |u, v| self.forward(w, h, u, v)))
    }

    pub fn apply_sample(&self, sample: &Sample) -> Result<Sample, DatasetError> {
        Ok(Sample {
            id: sample.id.clone(),
            hsi: self.apply_stack(&sample.hsi)?,
            rgb: self.apply_stack(&sample.rgb)?,
            density: self.apply_density(&sample.density)?,
            sparse: self.apply_stack(&sample.sparse)?,
            spots: self.apply_spots(&sample.spots)?,
        })
    }
}

/// The fixed flips and rotations plus one seeded random crop.
fn transforms(width: usize, height: usize, crop: Option<(usize, usize)>, seed: u64) -> Result<Vec<Transform>, DatasetError> {
    let mut out = vec![
        Transform::FlipHorizontal,
        Transform::FlipVertical,
        Transform::Rotate90,
        Transform::Rotate180,
        Transform::Rotate270,
    ];
    if let Some((cw, ch)) = crop {
        if cw == 0 || ch == 0 || cw > width || ch > height {
            return Err(DatasetError::CropTooLarge {
                crop: (cw, ch),
                image: (width, height),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rng.gen_range(0..=width - cw);
        let y = rng.gen_range(0..=height - ch);
        out.push(Transform::Crop { x, y, width: cw, height: ch });
    }
    Ok(out)
}

/// Augmented copies of `stack`: flips, rotations and an optional random crop.
pub fn augment(stack: &SpectralStack, seed: u64, crop: Option<(usize, usize)>) -> Result<Vec<SpectralStack>, DatasetError> {
    transforms(stack.width(), stack.height(), crop, seed)?
        .iter()
        .map(|t| t.apply_stack(stack))
        .collect()
}

/// Same as [`augment`] but keeps all layers of a sample aligned.
pub fn augment_sample(sample: &Sample, seed: u64, crop: Option<(usize, usize)>) -> Result<Vec<Sample>, DatasetError> {
    transforms(sample.hsi.width(), sample.hsi.height(), crop, seed)?
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut s = t.apply_sample(sample)?;
            s.id = format!("{}#aug{i}", sample.id);
            Ok(s)
        })
        .collect()
}
