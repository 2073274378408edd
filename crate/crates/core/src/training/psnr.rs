use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::EvalError;
use crate::dataset::{SpectralStack, VALUE_MAX};

const PEAK: f64 = 255.0;

/// Which PSNR formula to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsnrMode {
    /// `20 log10(255 / MSE)`: the amplitude form applied directly to the MSE.
    #[default]
    Paper,
    /// `10 log10(255^2 / MSE)`.
    Standard,
}

/// PSNR of a given mean squared error; `MSE = 0` gives `+inf`.
pub fn psnr_from_mse(mse: f64, mode: PsnrMode) -> f64 {
    if mse == 0.0 {
        return f64::INFINITY;
    }
    match mode {
        PsnrMode::Paper => 20.0 * (PEAK / mse).log10(),
        PsnrMode::Standard => 10.0 * (PEAK * PEAK / mse).log10(),
    }
}

fn check_same(pred: &SpectralStack, gt: &SpectralStack) -> Result<(), EvalError> {
    if !pred.same_dims(gt) || pred.channels() != gt.channels() {
        return Err(EvalError::Shape(format!(
            "prediction {}x{}x{} vs ground truth {}x{}x{}",
            pred.width(),
            pred.height(),
            pred.channels(),
            gt.width(),
            gt.height(),
            gt.channels()
        )));
    }
    Ok(())
}

/// Sum of squared differences and element count.
pub(crate) fn squared_error(pred: &SpectralStack, gt: &SpectralStack) -> Result<(f64, usize), EvalError> {
    check_same(pred, gt)?;
    let sse = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&a, &b)| {
            let d = f64::from(a) - f64::from(b);
            d * d
        })
        .sum();
    Ok((sse, pred.data().len()))
}

/// Per-band sums of squared differences.
pub(crate) fn band_squared_error(pred: &SpectralStack, gt: &SpectralStack) -> Result<Vec<f64>, EvalError> {
    check_same(pred, gt)?;
    Ok((0..gt.channels())
        .map(|c| {
            pred.band(c)
                .iter()
                .zip(gt.band(c))
                .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
                .sum()
        })
        .collect())
}

/// PSNR over all pixels and bands.
pub fn psnr(pred: &SpectralStack, gt: &SpectralStack, mode: PsnrMode) -> Result<f64, EvalError> {
    let (sse, n) = squared_error(pred, gt)?;
    Ok(psnr_from_mse(sse / n as f64, mode))
}

/// Per-pixel PSNR with a saturation mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PsnrMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    /// Pixels whose ground truth reaches the saturation threshold in any band.
    pub saturated: Vec<bool>,
}

/// Min and mean over unsaturated pixels; `None` when every pixel is saturated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapSummary {
    #[serde(with = "opt_inf")]
    pub min: Option<f64>,
    #[serde(with = "opt_inf")]
    pub mean: Option<f64>,
    pub saturated_pixels: usize,
    pub pixels: usize,
}

impl PsnrMap {
    pub fn summary(&self) -> MapSummary {
        let kept: Vec<f64> = self
            .values
            .iter()
            .zip(&self.saturated)
            .filter(|(_, &s)| !s)
            .map(|(&v, _)| v)
            .collect();
        let (min, mean) = if kept.is_empty() {
            (None, None)
        } else {
            (
                Some(kept.iter().cloned().fold(f64::INFINITY, f64::min)),
                Some(kept.iter().sum::<f64>() / kept.len() as f64),
            )
        };
        MapSummary {
            min,
            mean,
            saturated_pixels: self.saturated.iter().filter(|&&s| s).count(),
            pixels: self.values.len(),
        }
    }

    /// Single-band stack for storage; values clamped to the stack range and
    /// infinite entries stored as the maximum.
    pub fn to_stack(&self) -> SpectralStack {
        let data = self
            .values
            .iter()
            .map(|&v| v.clamp(0.0, f64::from(VALUE_MAX)) as f32)
            .collect();
        SpectralStack::new(self.width, self.height, vec![0.0], data).expect("map dims are valid")
    }
}

pub fn psnr_map(
    pred: &SpectralStack,
    gt: &SpectralStack,
    mode: PsnrMode,
    saturation_threshold: f32,
) -> Result<PsnrMap, EvalError> {
    check_same(pred, gt)?;
    let c = gt.channels();
    let mut values = Vec::with_capacity(gt.pixel_count());
    let mut saturated = Vec::with_capacity(gt.pixel_count());
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            let mut sse = 0f64;
            let mut sat = false;
            for b in 0..c {
                let g = gt.get(x, y, b);
                sat |= g >= saturation_threshold;
                sse += (f64::from(pred.get(x, y, b)) - f64::from(g)).powi(2);
            }
            values.push(psnr_from_mse(sse / c as f64, mode));
            saturated.push(sat);
        }
    }
    Ok(PsnrMap {
        width: gt.width(),
        height: gt.height(),
        values,
        saturated,
    })
}

/// Serializes non-finite reals as the strings `"inf"`, `"-inf"` and `"nan"`.
pub mod inf_f64 {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("not a real: {other:?}"))),
            },
        }
    }
}

pub mod opt_inf {
    use super::*;

    #[derive(Serialize, Deserialize)]
    struct Wrap(#[serde(with = "super::inf_f64")] f64);

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.map(Wrap).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
    }
}

pub mod vec_inf {
    use super::*;

    #[derive(Serialize, Deserialize)]
    struct Wrap(#[serde(with = "super::inf_f64")] f64);

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|&x| Wrap(x)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<Wrap>::deserialize(d)?.into_iter().map(|w| w.0).collect())
    }
}
