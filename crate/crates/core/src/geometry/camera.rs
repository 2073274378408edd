use std::path::Path;

use nalgebra::{Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Distortion-free pinhole intrinsics; pixel centers at integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for PinholeCamera {
    fn default() -> Self {
        Self {
            fx: 500.0,
            fy: 500.0,
            cx: 319.5,
            cy: 239.5,
            width: 640,
            height: 480,
        }
    }
}

impl PinholeCamera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self, GeometryError> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(GeometryError::Invalid(format!("focal lengths must be positive, got {} and {}", self.fx, self.fy)));
        }
        if !self.contains(self.cx, self.cy) {
            return Err(GeometryError::Invalid(format!(
                "principal point ({}, {}) outside the {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u <= self.width as f64 - 1.0 && v <= self.height as f64 - 1.0
    }

    /// Pixel to normalized image coordinates.
    pub fn normalize(&self, u: f64, v: f64) -> Vector2<f64> {
        Vector2::new((u - self.cx) / self.fx, (v - self.cy) / self.fy)
    }

    pub fn denormalize(&self, n: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(n.x * self.fx + self.cx, n.y * self.fy + self.cy)
    }

    /// Back-projected ray direction `(x, y, 1)` of a pixel.
    pub fn bearing(&self, u: f64, v: f64) -> Vector3<f64> {
        self.normalize(u, v).push(1.0)
    }

    /// Pixel of a camera-frame point; `None` behind the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        (p.z > 0.0).then(|| self.denormalize(&Vector2::new(p.x / p.z, p.y / p.z)))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self, GeometryError> {
        let cam: Self = super::read_json(path.as_ref())?;
        cam.validate()?;
        Ok(cam)
    }
}

/// One calibrated spot ray in the probe frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpotRay {
    pub id: u32,
    pub wavelength_nm: f64,
    pub direction: [f64; 3],
}

/// The structured-light channel beside the imaging channel.
///
/// The probe origin sits `baseline_mm` along the camera x axis and the probe
/// frame is turned by `angle_deg` about the camera y axis towards the optical
/// axis, so the central ray crosses it at `baseline / tan(angle)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeRig {
    pub baseline_mm: f64,
    pub angle_deg: f64,
    pub rays: Vec<SpotRay>,
}

impl Default for ProbeRig {
    fn default() -> Self {
        Self::grid(5.0, 10.0, 9, 0.25)
    }
}

impl ProbeRig {
    /// `n`×`n` rays whose tangents span `±half_tan` in both directions.
    pub fn grid(baseline_mm: f64, angle_deg: f64, n: usize, half_tan: f64) -> Self {
        let step = if n > 1 { 2.0 * half_tan / (n - 1) as f64 } else { 0.0 };
        let mut rays = Vec::with_capacity(n * n);
        for r in 0..n {
            for c in 0..n {
                let d = Vector3::new(-half_tan + c as f64 * step, -half_tan + r as f64 * step, 1.0).normalize();
                let id = (r * n + c) as u32;
                rays.push(SpotRay {
                    id,
                    wavelength_nm: 460.0 + 10.0 * f64::from(id % 24),
                    direction: [d.x, d.y, d.z],
                });
            }
        }
        Self {
            baseline_mm,
            angle_deg,
            rays,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.baseline_mm > 0.0 && self.baseline_mm.is_finite()) {
            return Err(GeometryError::Invalid(format!("baseline must be positive, got {}", self.baseline_mm)));
        }
        if !self.angle_deg.is_finite() {
            return Err(GeometryError::Invalid("probe angle must be finite".into()));
        }
        let mut ids = std::collections::BTreeSet::new();
        for r in &self.rays {
            let norm = Vector3::from(r.direction).norm();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(GeometryError::Invalid(format!("ray {} has norm {norm}", r.id)));
            }
            if !ids.insert(r.id) {
                return Err(GeometryError::Invalid(format!("duplicate ray id {}", r.id)));
            }
        }
        Ok(())
    }

    /// Probe origin in the camera frame.
    pub fn origin(&self) -> Vector3<f64> {
        Vector3::new(self.baseline_mm, 0.0, 0.0)
    }

    fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_axis_angle(&Vector3::y_axis(), -self.angle_deg.to_radians())
    }

    /// Unit ray direction of spot `id` in the camera frame.
    pub fn ray(&self, id: u32) -> Option<Vector3<f64>> {
        let r = self.rays.iter().find(|r| r.id == id)?;
        Some(self.rotation() * Vector3::from(r.direction))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self, GeometryError> {
        let rig: Self = super::read_json(path.as_ref())?;
        rig.validate()?;
        Ok(rig)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("rig serializes")
    }
}
