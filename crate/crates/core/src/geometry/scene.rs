use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{CorrespondenceSet, GeometryError, PinholeCamera, Pose, ProbeRig};
use crate::dataset::{Spot, SpotSet};

/// Surface whose depth in camera A is a quadratic in the normalized bearing:
/// `z = z0 (1 + a x + b y + c x² + d x y + e y²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BearingQuadric {
    pub z0_mm: f64,
    pub coeffs: [f64; 5],
}

impl Default for BearingQuadric {
    fn default() -> Self {
        Self {
            z0_mm: 30.0,
            coeffs: [0.1, -0.05, 0.3, 0.1, 0.2],
        }
    }
}

impl BearingQuadric {
    pub fn depth(&self, b: &Vector2<f64>) -> f64 {
        let [a, bb, c, d, e] = self.coeffs;
        self.z0_mm * (1.0 + a * b.x + bb * b.y + c * b.x * b.x + d * b.x * b.y + e * b.y * b.y)
    }

    pub fn point(&self, b: &Vector2<f64>) -> Vector3<f64> {
        b.push(1.0) * self.depth(b)
    }

    /// First crossing of the ray `o + λ d` with the surface.
    pub fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<Vector3<f64>> {
        let g = |l: f64| {
            let x = o + d * l;
            if x.z <= 0.0 {
                return f64::NAN;
            }
            x.z - self.depth(&Vector2::new(x.x / x.z, x.y / x.z))
        };
        let mut l = (self.z0_mm - o.z) / d.z;
        for _ in 0..100 {
            let h = 1e-6 * l.abs().max(1.0);
            let slope = (g(l + h) - g(l - h)) / (2.0 * h);
            let step = g(l) / slope;
            if !step.is_finite() {
                return None;
            }
            l -= step;
            if step.abs() < 1e-14 * l.abs().max(1.0) {
                break;
            }
        }
        (l > 0.0 && g(l).abs() < 1e-9).then(|| o + d * l)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub camera: PinholeCamera,
    pub rig: ProbeRig,
    pub surface: BearingQuadric,
    /// Rotation of frame B relative to A about the camera y axis.
    pub rotation_deg: f64,
    /// `t` of `X_B = R X_A + t`, mm.
    pub translation_mm: [f64; 3],
    pub features: usize,
    pub outlier_fraction: f64,
    /// Outliers are redrawn until they sit at least this far from their
    /// true epipolar line.
    pub outlier_min_epipolar_px: f64,
    /// Standard deviation of Gaussian noise on every correspondence
    /// coordinate.
    pub noise_px: f64,
    pub border_px: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            camera: PinholeCamera::default(),
            rig: ProbeRig::default(),
            surface: BearingQuadric::default(),
            rotation_deg: 5.0,
            translation_mm: [4.0, 0.0, 0.8],
            features: 200,
            outlier_fraction: 0.0,
            outlier_min_epipolar_px: 20.0,
            noise_px: 0.0,
            border_px: 20.0,
            seed: 0,
        }
    }
}

/// Synthetic two-frame scene with ground truth. Both SL captures are taken
/// at the pose of frame A.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub config: SceneConfig,
    pub pose: Pose,
    pub correspondences: CorrespondenceSet,
    /// Ground-truth surface point per correspondence, frame A, mm.
    pub truth: Vec<Vector3<f64>>,
    pub outlier: Vec<bool>,
    pub sl_a: SpotSet,
    pub sl_b: SpotSet,
    /// Ground-truth SL points by spot id.
    pub sl_truth: Vec<(u32, Vector3<f64>)>,
}

fn epipolar_distance_px(f: &Matrix3<f64>, p: &Vector2<f64>, q: &Vector2<f64>) -> f64 {
    let l = f * p.push(1.0);
    q.push(1.0).dot(&l).abs() / l.x.hypot(l.y)
}

pub fn generate_scene(cfg: &SceneConfig) -> Result<SyntheticScene, GeometryError> {
    let cam = &cfg.camera;
    cam.validate()?;
    cfg.rig.validate()?;
    if !(0.0..1.0).contains(&cfg.outlier_fraction) || cfg.noise_px < 0.0 {
        return Err(GeometryError::Invalid("outlier fraction must be in [0, 1) and noise non-negative".into()));
    }
    let t = Vector3::from(cfg.translation_mm);
    if t.norm() == 0.0 {
        return Err(GeometryError::Invalid("scene needs a non-zero baseline between frames".into()));
    }
    let pose = Pose {
        rotation: Rotation3::from_axis_angle(&Vector3::y_axis(), cfg.rotation_deg.to_radians()),
        translation: t,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_px.max(f64::MIN_POSITIVE)).expect("valid deviation");
    let jitter = |rng: &mut ChaCha8Rng| if cfg.noise_px > 0.0 { noise.sample(rng) } else { 0.0 };
    let (lo_u, hi_u) = (cfg.border_px, cam.width as f64 - 1.0 - cfg.border_px);
    let (lo_v, hi_v) = (cfg.border_px, cam.height as f64 - 1.0 - cfg.border_px);
    if lo_u >= hi_u || lo_v >= hi_v {
        return Err(GeometryError::Invalid("border leaves no image area".into()));
    }
    let inside = |u: &Vector2<f64>| u.x >= lo_u && u.x <= hi_u && u.y >= lo_v && u.y <= hi_v;

    let mut truth = Vec::with_capacity(cfg.features);
    let mut pairs = Vec::with_capacity(cfg.features);
    let mut attempts = 0;
    while truth.len() < cfg.features {
        attempts += 1;
        if attempts > 1000 * cfg.features.max(1) {
            return Err(GeometryError::Invalid("scene leaves too little overlap between the frames".into()));
        }
        let a = Vector2::new(rng.gen_range(lo_u..hi_u), rng.gen_range(lo_v..hi_v));
        let x = cfg.surface.point(&cam.normalize(a.x, a.y));
        if x.z <= 0.0 {
            continue;
        }
        let Some(b) = cam.project(&(pose.rotation * x + pose.translation)) else { continue };
        if !inside(&b) {
            continue;
        }
        truth.push(x);
        pairs.push((a, b));
    }

    let k_inv = Matrix3::new(1.0 / cam.fx, 0.0, -cam.cx / cam.fx, 0.0, 1.0 / cam.fy, -cam.cy / cam.fy, 0.0, 0.0, 1.0);
    let f = k_inv.transpose() * pose.essential() * k_inv;
    let n_out = (cfg.outlier_fraction * cfg.features as f64).round() as usize;
    let mut outlier = vec![false; cfg.features];
    for i in rand::seq::index::sample(&mut rng, cfg.features, n_out).into_vec() {
        outlier[i] = true;
        loop {
            let q = Vector2::new(rng.gen_range(lo_u..hi_u), rng.gen_range(lo_v..hi_v));
            if epipolar_distance_px(&f, &pairs[i].0, &q) >= cfg.outlier_min_epipolar_px {
                pairs[i].1 = q;
                break;
            }
        }
    }
    let correspondences = CorrespondenceSet::from_points(pairs.iter().map(|(a, b)| {
        let a = [a.x + jitter(&mut rng), a.y + jitter(&mut rng)];
        let b = [b.x + jitter(&mut rng), b.y + jitter(&mut rng)];
        (a, b)
    }));

    let mut spots = Vec::new();
    let mut sl_truth = Vec::new();
    for r in &cfg.rig.rays {
        let d = cfg.rig.ray(r.id).expect("ray from rig");
        let Some(x) = cfg.surface.intersect(&cfg.rig.origin(), &d) else { continue };
        let Some(px) = cam.project(&x) else { continue };
        if cam.contains(px.x, px.y) {
            spots.push(Spot {
                id: r.id,
                u: px.x,
                v: px.y,
                wavelength_nm: r.wavelength_nm,
            });
            sl_truth.push((r.id, x));
        }
    }
    let sl_a = SpotSet::new(cam.width, cam.height, spots).map_err(|e| GeometryError::Invalid(e.to_string()))?;
    Ok(SyntheticScene {
        config: cfg.clone(),
        pose,
        correspondences,
        truth,
        outlier,
        sl_b: sl_a.clone(),
        sl_a,
        sl_truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intersection_lies_on_surface_and_ray() {
        let s = BearingQuadric::default();
        let o = Vector3::new(5.0, 0.0, 0.0);
        let d = Vector3::new(-0.2, 0.05, 1.0).normalize();
        let x = s.intersect(&o, &d).unwrap();
        let b = Vector2::new(x.x / x.z, x.y / x.z);
        assert!((x.z - s.depth(&b)).abs() < 1e-9);
        assert!(((x - o).normalize() - d).norm() < 1e-9);
    }

    #[test]
    fn outliers_keep_their_distance() {
        let cfg = SceneConfig {
            outlier_fraction: 0.3,
            ..Default::default()
        };
        let s = generate_scene(&cfg).unwrap();
        assert_eq!(s.outlier.iter().filter(|&&o| o).count(), 60);
        let cam = &cfg.camera;
        let e = s.pose.essential();
        for (c, &o) in s.correspondences.pairs.iter().zip(&s.outlier) {
            let r = super::super::epipolar::sampson_distance(&e, &cam.normalize(c.p[0], c.p[1]), &cam.normalize(c.q[0], c.q[1]));
            assert_eq!(r > 1e-3, o);
        }
        assert!(s.sl_a.len() >= 40);
    }
}
