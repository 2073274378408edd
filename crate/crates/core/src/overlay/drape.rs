use super::OverlayError;
use crate::geometry::{PinholeCamera, PointCloud};

/// Real-valued image; `NaN` means no data.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl ScalarMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, OverlayError> {
        if values.len() != width * height || width == 0 || height == 0 {
            return Err(OverlayError::Invalid(format!("{} values for a {width}x{height} map", values.len())));
        }
        Ok(Self { width, height, values })
    }

    /// Bilinear sample; `None` outside the pixel grid.
    pub fn sample(&self, u: f64, v: f64) -> Option<f64> {
        if !(u >= 0.0 && v >= 0.0 && u <= (self.width - 1) as f64 && v <= (self.height - 1) as f64) {
            return None;
        }
        let (x0, y0) = ((u.floor() as usize).min(self.width - 1), (v.floor() as usize).min(self.height - 1));
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = (u - x0 as f64, v - y0 as f64);
        let at = |x: usize, y: usize| self.values[y * self.width + x];
        let top = at(x0, y0) * (1.0 - fx) + if fx > 0.0 { at(x1, y0) * fx } else { 0.0 };
        let bottom = at(x0, y1) * (1.0 - fx) + if fx > 0.0 { at(x1, y1) * fx } else { 0.0 };
        let value = top * (1.0 - fy) + if fy > 0.0 { bottom * fy } else { 0.0 };
        value.is_finite().then_some(value)
    }
}

fn check_dims(cam: &PinholeCamera, w: usize, h: usize) -> Result<(), OverlayError> {
    if cam.width != w || cam.height != h {
        return Err(OverlayError::Invalid(format!(
            "{w}x{h} map does not match the {}x{} camera",
            cam.width, cam.height
        )));
    }
    Ok(())
}

/// Samples `map` at every point's projection; points outside the image or
/// on undefined pixels get `NaN`.
pub fn drape_overlay(cloud: &PointCloud, map: &ScalarMap, cam: &PinholeCamera) -> Result<PointCloud, OverlayError> {
    check_dims(cam, map.width, map.height)?;
    let values = cloud
        .points()
        .iter()
        .map(|p| cam.project(p).and_then(|u| map.sample(u.x, u.y)).unwrap_or(f64::NAN))
        .collect();
    let mut out = cloud.clone();
    out.set_values(values)?;
    Ok(out)
}

/// Per-point colors from an RGB image; outside points are black and carry a
/// `NaN` value, inside points the value 1.
pub fn drape_colors(
    cloud: &PointCloud,
    colors: &[[u8; 3]],
    width: usize,
    height: usize,
    cam: &PinholeCamera,
) -> Result<PointCloud, OverlayError> {
    check_dims(cam, width, height)?;
    let channels: Vec<ScalarMap> = (0..3)
        .map(|k| ScalarMap::new(width, height, colors.iter().map(|c| f64::from(c[k])).collect()))
        .collect::<Result<_, _>>()?;
    let mut rgb = Vec::with_capacity(cloud.len());
    let mut flags = Vec::with_capacity(cloud.len());
    for p in cloud.points() {
        let sampled = cam.project(p).and_then(|u| {
            let c: Option<Vec<f64>> = channels.iter().map(|m| m.sample(u.x, u.y)).collect();
            c
        });
        match sampled {
            Some(c) => {
                rgb.push([0, 1, 2].map(|k| c[k].round().clamp(0.0, 255.0) as u8));
                flags.push(1.0);
            }
            None => {
                rgb.push([0, 0, 0]);
                flags.push(f64::NAN);
            }
        }
    }
    let mut out = cloud.clone();
    out.set_colors(rgb)?;
    out.set_values(flags)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{PointSource, ScaleStatus};
    use nalgebra::Vector3;

    fn cam() -> PinholeCamera {
        PinholeCamera::new(50.0, 50.0, 15.5, 11.5, 32, 24).unwrap()
    }

    #[test]
    fn plane_with_gradient_map() {
        let cam = cam();
        let map = ScalarMap::new(32, 24, (0..32 * 24).map(|i| 0.5 * (i % 32) as f64 + 2.0 * (i / 32) as f64).collect()).unwrap();
        let mut cloud = PointCloud::new(ScaleStatus::Metric);
        for k in 0..20 {
            let p = Vector3::new(-2.0 + 0.21 * k as f64, 1.5 - 0.13 * k as f64, 30.0);
            cloud.push(p, PointSource::Motion, k).unwrap();
        }
        cloud.push(Vector3::new(100.0, 0.0, 30.0), PointSource::Motion, 99).unwrap();
        let out = drape_overlay(&cloud, &map, &cam).unwrap();
        for (p, v) in out.points().iter().zip(out.values().unwrap()).take(20) {
            let (u, w) = (cam.fx * p.x / p.z + cam.cx, cam.fy * p.y / p.z + cam.cy);
            assert!((v - (0.5 * u + 2.0 * w)).abs() < 1e-6);
        }
        assert!(out.values().unwrap()[20].is_nan());
    }

    #[test]
    fn constant_map_is_constant() {
        let cam = cam();
        let map = ScalarMap::new(32, 24, vec![0.7; 32 * 24]).unwrap();
        let mut cloud = PointCloud::new(ScaleStatus::Metric);
        cloud.push(Vector3::new(0.3, 0.2, 10.0), PointSource::StructuredLight, 1).unwrap();
        let out = drape_overlay(&cloud, &map, &cam).unwrap();
        assert!((out.values().unwrap()[0] - 0.7).abs() < 1e-12);
        let empty = drape_overlay(&PointCloud::new(ScaleStatus::Metric), &map, &cam).unwrap();
        assert!(empty.is_empty());
    }
}
