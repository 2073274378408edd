use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{GeometryError, PinholeCamera, PointCloud, PointSource, ProbeRig, ScaleStatus};
use crate::dataset::SpotSet;

/// Closest approach of two rays `o + λ d`.
pub(crate) struct RayMeet {
    pub midpoint: Vector3<f64>,
    /// Length of the common perpendicular.
    pub skew: f64,
    /// Angle between the rays in radians.
    pub angle: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

pub(crate) fn ray_meet(o1: &Vector3<f64>, d1: &Vector3<f64>, o2: &Vector3<f64>, d2: &Vector3<f64>) -> Option<RayMeet> {
    let (d1, d2) = (d1.normalize(), d2.normalize());
    let w = o1 - o2;
    let b = d1.dot(&d2);
    let denom = 1.0 - b * b;
    if denom < 1e-24 {
        return None;
    }
    let (d, e) = (d1.dot(&w), d2.dot(&w));
    let lambda1 = (b * e - d) / denom;
    let lambda2 = (e - b * d) / denom;
    let p1 = o1 + d1 * lambda1;
    let p2 = o2 + d2 * lambda2;
    Some(RayMeet {
        midpoint: (p1 + p2) * 0.5,
        skew: (p1 - p2).norm(),
        angle: denom.sqrt().asin(),
        lambda1,
        lambda2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlConfig {
    /// Largest accepted gap between camera and probe rays.
    pub max_skew_mm: f64,
    pub min_angle_deg: f64,
    pub min_depth_mm: f64,
    pub max_depth_mm: f64,
}

impl Default for SlConfig {
    fn default() -> Self {
        Self {
            max_skew_mm: 0.5,
            min_angle_deg: 1.0,
            min_depth_mm: 5.0,
            max_depth_mm: 100.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlDrop {
    UnknownRay,
    NearParallel,
    Skew,
    DepthRange,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlReconstruction {
    /// Metric points labelled by spot id.
    pub cloud: PointCloud,
    pub dropped: Vec<(u32, SlDrop)>,
}

/// Midpoint triangulation of every spot between its camera back-projection
/// and its calibrated probe ray.
pub fn triangulate_sl(spots: &SpotSet, cam: &PinholeCamera, rig: &ProbeRig, cfg: &SlConfig) -> Result<SlReconstruction, GeometryError> {
    cam.validate()?;
    rig.validate()?;
    let mut cloud = PointCloud::new(ScaleStatus::Metric);
    let mut dropped = Vec::new();
    let origin = rig.origin();
    for s in spots.spots() {
        let Some(ray) = rig.ray(s.id) else {
            dropped.push((s.id, SlDrop::UnknownRay));
            continue;
        };
        let meet = ray_meet(&Vector3::zeros(), &cam.bearing(s.u, s.v), &origin, &ray);
        let Some(meet) = meet.filter(|m| m.angle >= cfg.min_angle_deg.to_radians()) else {
            dropped.push((s.id, SlDrop::NearParallel));
            continue;
        };
        if meet.skew > cfg.max_skew_mm {
            dropped.push((s.id, SlDrop::Skew));
            continue;
        }
        let z = meet.midpoint.z;
        if !(meet.lambda1 > 0.0 && meet.lambda2 > 0.0 && z >= cfg.min_depth_mm && z <= cfg.max_depth_mm) {
            dropped.push((s.id, SlDrop::DepthRange));
            continue;
        }
        cloud.push(meet.midpoint, PointSource::StructuredLight, u64::from(s.id))?;
    }
    Ok(SlReconstruction { cloud, dropped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Spot;

    fn spots_on_plane(depth: f64, cam: &PinholeCamera, rig: &ProbeRig) -> SpotSet {
        let mut spots = Vec::new();
        for r in &rig.rays {
            let d = rig.ray(r.id).unwrap();
            let p = rig.origin() + d * ((depth - rig.origin().z) / d.z);
            let px = cam.project(&p).unwrap();
            if cam.contains(px.x, px.y) {
                spots.push(Spot {
                    id: r.id,
                    u: px.x,
                    v: px.y,
                    wavelength_nm: r.wavelength_nm,
                });
            }
        }
        SpotSet::new(cam.width, cam.height, spots).unwrap()
    }

    #[test]
    fn plane_points_recovered() {
        let (cam, rig) = (PinholeCamera::default(), ProbeRig::default());
        for depth in [15.0, 30.0, 40.0] {
            let spots = spots_on_plane(depth, &cam, &rig);
            let out = triangulate_sl(&spots, &cam, &rig, &SlConfig::default()).unwrap();
            assert_eq!(out.cloud.len(), spots.len(), "depth {depth}");
            assert!(out.dropped.is_empty());
            for p in out.cloud.points() {
                assert!((p.z - depth).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn unknown_ray_and_skew_dropped() {
        let cam = PinholeCamera::default();
        let rig = ProbeRig::default();
        let mut spots = spots_on_plane(30.0, &cam, &rig).spots().to_vec();
        spots[0].v += 40.0;
        spots.push(Spot {
            id: 999,
            u: 10.0,
            v: 10.0,
            wavelength_nm: 500.0,
        });
        let set = SpotSet::new(cam.width, cam.height, spots).unwrap();
        let out = triangulate_sl(&set, &cam, &rig, &SlConfig::default()).unwrap();
        assert!(out.dropped.contains(&(999, SlDrop::UnknownRay)));
        assert!(out.dropped.iter().any(|d| d.1 == SlDrop::Skew));
    }

    #[test]
    fn parallel_rays_do_not_meet() {
        let z = Vector3::zeros();
        let d = Vector3::new(0.0, 0.0, 1.0);
        assert!(ray_meet(&z, &d, &Vector3::new(1.0, 0.0, 0.0), &d).is_none());
    }
}
