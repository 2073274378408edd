use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{GeometryError, PointCloud, PointSource, ScaleStatus};

/// Matching of SfM points to the structured-light reference.
///
/// Each reference point is paired with the SfM surface along its own
/// bearing from camera A: an SfM point on (practically) the same bearing is
/// used directly, otherwise depth is interpolated by a local quadratic fit
/// over the nearest SfM bearings. Pairs further than `gate_mm` from the
/// reference after a robust first scale are discarded before the final
/// least-squares scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScaleConfig {
    pub gate_mm: f64,
    pub neighbors: usize,
    /// Largest bearing distance (normalized coordinates) to the nearest SfM
    /// point for a reference point to be used.
    pub max_bearing_gap: f64,
    pub coincident_bearing: f64,
}

impl Default for ScaleConfig {
    fn default() -> Self {
        Self {
            gate_mm: 2.0,
            neighbors: 12,
            max_bearing_gap: 0.05,
            coincident_bearing: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleFit {
    pub cloud: PointCloud,
    pub scale: f64,
    pub pairs_used: usize,
    /// RMS of `s·p − r` over the used pairs, mm.
    pub residual_rms_mm: f64,
}

/// Per-spot average of two metric SL clouds over the spots seen in both.
pub fn average_sl(a: &PointCloud, b: &PointCloud) -> Result<PointCloud, GeometryError> {
    if a.scale_status() != ScaleStatus::Metric || b.scale_status() != ScaleStatus::Metric {
        return Err(GeometryError::Registration("structured-light clouds must be metric".into()));
    }
    let mut out = PointCloud::new(ScaleStatus::Metric);
    for (pa, &label) in a.points().iter().zip(a.labels()) {
        if let Some(pb) = b.position_of(label) {
            out.push((pa + pb) * 0.5, PointSource::StructuredLight, label)?;
        }
    }
    Ok(out)
}

fn bearing(p: &Vector3<f64>) -> Vector2<f64> {
    Vector2::new(p.x / p.z, p.y / p.z)
}

/// Depth at bearing `b` from a quadratic in the bearing offset, fitted to the
/// `k` nearest SfM bearings.
fn fitted_depth(b: &Vector2<f64>, near: &[(f64, Vector2<f64>, f64)]) -> Option<f64> {
    if near.len() < 6 {
        return None;
    }
    let span = near.iter().map(|n| n.0).fold(0.0, f64::max).max(1e-12);
    let mut a = DMatrix::zeros(near.len(), 6);
    let mut y = DVector::zeros(near.len());
    for (i, (_, nb, z)) in near.iter().enumerate() {
        let d = (nb - b) / span;
        let row = [1.0, d.x, d.y, d.x * d.x, d.x * d.y, d.y * d.y];
        for (j, v) in row.iter().enumerate() {
            a[(i, j)] = *v;
        }
        y[i] = *z;
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() < 1e-10 * smax {
        return None;
    }
    let c = svd.solve(&y, 0.0).ok()?;
    Some(c[0])
}

/// Metric scale of an up-to-scale SfM cloud from a pair of SL clouds in the
/// same camera frame.
pub fn register_scale(sfm: &PointCloud, sl: (&PointCloud, &PointCloud), cfg: &ScaleConfig) -> Result<ScaleFit, GeometryError> {
    let reference = average_sl(sl.0, sl.1)?;
    let sfm_b: Vec<(Vector2<f64>, f64)> = sfm
        .points()
        .iter()
        .filter(|p| p.z > 0.0)
        .map(|p| (bearing(p), p.z))
        .collect();
    if sfm_b.is_empty() || reference.is_empty() {
        return Err(GeometryError::Registration("no overlap between SfM and structured-light clouds".into()));
    }
    let mut pairs: Vec<(Vector3<f64>, Vector3<f64>)> = Vec::new();
    for r in reference.points() {
        if r.z <= 0.0 {
            continue;
        }
        let b = bearing(r);
        let mut near: Vec<(f64, Vector2<f64>, f64)> = sfm_b.iter().map(|(nb, z)| ((nb - b).norm(), *nb, *z)).collect();
        near.sort_by(|x, y| x.0.total_cmp(&y.0));
        if near[0].0 > cfg.max_bearing_gap {
            continue;
        }
        let z = if near[0].0 <= cfg.coincident_bearing {
            near[0].2
        } else {
            near.truncate(cfg.neighbors);
            match fitted_depth(&b, &near) {
                Some(z) => z,
                None => continue,
            }
        };
        if z > 0.0 {
            pairs.push((b.push(1.0) * z, *r));
        }
    }
    if pairs.is_empty() {
        return Err(GeometryError::Registration("no structured-light point lies inside the SfM coverage".into()));
    }
    let mut ratios: Vec<f64> = pairs.iter().map(|(p, r)| r.z / p.z).collect();
    ratios.sort_by(f64::total_cmp);
    let s0 = ratios[ratios.len() / 2];
    let gated: Vec<_> = pairs.iter().filter(|(p, r)| (p * s0 - r).norm() <= cfg.gate_mm).collect();
    if gated.is_empty() {
        return Err(GeometryError::Registration(format!("no pair within the {} mm gate", cfg.gate_mm)));
    }
    let num: f64 = gated.iter().map(|(p, r)| p.dot(r)).sum();
    let den: f64 = gated.iter().map(|(p, _)| p.dot(p)).sum();
    let s = num / den;
    if !(s > 0.0 && s.is_finite()) {
        return Err(GeometryError::Registration(format!("non-positive scale {s}")));
    }
    let residual_rms_mm = (gated.iter().map(|(p, r)| (p * s - r).norm_squared()).sum::<f64>() / gated.len() as f64).sqrt();
    Ok(ScaleFit {
        cloud: sfm.scaled_to_metric(s),
        scale: s,
        pairs_used: gated.len(),
        residual_rms_mm,
    })
}
