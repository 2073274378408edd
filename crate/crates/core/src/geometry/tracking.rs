use std::io::Read;
use std::path::Path;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::GeometryError;
use crate::dataset::SpectralStack;

/// Single-channel image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(GeometryError::Invalid(format!("{} values for a {width}x{height} image", data.len())));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let data = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Self { width, height, data }
    }

    /// Channel mean of a stack.
    pub fn from_stack(stack: &SpectralStack) -> Self {
        let c = stack.channels() as f32;
        Self::from_fn(stack.width(), stack.height(), |x, y| stack.spectrum(x, y).iter().sum::<f32>() / c)
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

    fn clamped(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }

    /// Bilinear sample with edge clamping.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let (xi, yi) = (x0 as isize, y0 as isize);
        let v = |dx, dy| f64::from(self.clamped(xi + dx, yi + dy));
        (1.0 - fy) * ((1.0 - fx) * v(0, 0) + fx * v(1, 0)) + fy * ((1.0 - fx) * v(0, 1) + fx * v(1, 1))
    }

    fn gradient(&self, x: f64, y: f64) -> Vector2<f64> {
        Vector2::new(
            (self.sample(x + 1.0, y) - self.sample(x - 1.0, y)) * 0.5,
            (self.sample(x, y + 1.0) - self.sample(x, y - 1.0)) * 0.5,
        )
    }

    /// 2×2 box downsampling.
    fn half(&self) -> Self {
        let (w, h) = ((self.width / 2).max(1), (self.height / 2).max(1));
        Self::from_fn(w, h, |x, y| {
            let (x2, y2) = (2 * x as isize, 2 * y as isize);
            (self.clamped(x2, y2) + self.clamped(x2 + 1, y2) + self.clamped(x2, y2 + 1) + self.clamped(x2 + 1, y2 + 1)) * 0.25
        })
    }

    fn pyramid(&self, levels: usize) -> Vec<GrayImage> {
        let mut out = vec![self.clone()];
        for _ in 1..levels {
            let next = out.last().expect("non-empty").half();
            out.push(next);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub descriptor: Vec<f32>,
}

/// Source of keypoints and descriptors for tracking.
pub trait FeatureDetector {
    fn detect(&self, image: &GrayImage) -> Vec<Keypoint>;
    /// Descriptor of an arbitrary (sub-pixel) location, used to compare a
    /// keypoint with its tracked position.
    fn describe(&self, image: &GrayImage, x: f64, y: f64) -> Vec<f32>;
}

/// Minimum-eigenvalue corner response with zero-mean, unit-norm patch
/// descriptors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CornerDetector {
    pub max_corners: usize,
    /// Responses below this fraction of the strongest are discarded.
    pub quality: f64,
    pub min_distance_px: f64,
    pub window_radius: usize,
    pub patch_radius: usize,
    /// Smallest absolute response; flat images yield no corners.
    pub min_response: f64,
}

impl Default for CornerDetector {
    fn default() -> Self {
        Self {
            max_corners: 400,
            quality: 0.01,
            min_distance_px: 8.0,
            window_radius: 2,
            patch_radius: 4,
            min_response: 1e-6,
        }
    }
}

impl CornerDetector {
    fn response(&self, img: &GrayImage, x: usize, y: usize) -> f64 {
        let r = self.window_radius as isize;
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for dy in -r..=r {
            for dx in -r..=r {
                let (px, py) = (x as isize + dx, y as isize + dy);
                let gx = f64::from(img.clamped(px + 1, py) - img.clamped(px - 1, py)) * 0.5;
                let gy = f64::from(img.clamped(px, py + 1) - img.clamped(px, py - 1)) * 0.5;
                a += gx * gx;
                b += gx * gy;
                c += gy * gy;
            }
        }
        let tr = a + c;
        let det = a * c - b * b;
        tr * 0.5 - ((tr * tr * 0.25 - det).max(0.0)).sqrt()
    }
}

impl FeatureDetector for CornerDetector {
    fn detect(&self, img: &GrayImage) -> Vec<Keypoint> {
        let border = self.patch_radius.max(self.window_radius) + 2;
        if img.width <= 2 * border || img.height <= 2 * border {
            return Vec::new();
        }
        let mut candidates = Vec::new();
        for y in border..img.height - border {
            for x in border..img.width - border {
                candidates.push((self.response(img, x, y), x, y));
            }
        }
        let strongest = candidates.iter().map(|c| c.0).fold(0.0, f64::max);
        let floor = (strongest * self.quality).max(self.min_response);
        candidates.retain(|c| c.0 >= floor);
        // stable order: strongest first, ties in raster order
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.2, a.1).cmp(&(b.2, b.1))));
        let mut picked: Vec<(usize, usize)> = Vec::new();
        let d2 = self.min_distance_px * self.min_distance_px;
        for (_, x, y) in candidates {
            if picked.len() == self.max_corners {
                break;
            }
            let far = picked.iter().all(|&(px, py)| {
                let (dx, dy) = (px as f64 - x as f64, py as f64 - y as f64);
                dx * dx + dy * dy >= d2
            });
            if far {
                picked.push((x, y));
            }
        }
        picked
            .into_iter()
            .map(|(x, y)| {
                let (x, y) = (x as f64, y as f64);
                Keypoint {
                    x,
                    y,
                    descriptor: self.describe(img, x, y),
                }
            })
            .collect()
    }

    fn describe(&self, img: &GrayImage, x: f64, y: f64) -> Vec<f32> {
        let r = self.patch_radius as isize;
        let mut v: Vec<f64> = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
        for dy in -r..=r {
            for dx in -r..=r {
                v.push(img.sample(x + dx as f64, y + dy as f64));
            }
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.iter_mut().for_each(|a| *a -= mean);
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let scale = if norm > 1e-12 { 1.0 / norm } else { 0.0 };
        v.into_iter().map(|a| (a * scale) as f32).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub levels: usize,
    pub window_radius: usize,
    pub iterations: usize,
    /// Update size in pixels below which iteration stops.
    pub epsilon: f64,
    pub min_matches: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            window_radius: 7,
            iterations: 30,
            epsilon: 1e-3,
            min_matches: 8,
        }
    }
}

/// Pyramidal Lucas-Kanade: position in `b` of the point `(x, y)` of `a`.
fn lk_track(pa: &[GrayImage], pb: &[GrayImage], x: f64, y: f64, cfg: &FlowConfig) -> Option<Vector2<f64>> {
    let r = cfg.window_radius as isize;
    let mut guess = Vector2::zeros();
    for level in (0..pa.len()).rev() {
        let s = f64::from(1u32 << level);
        let (cx, cy) = (x / s, y / s);
        let (a, b) = (&pa[level], &pb[level]);
        let mut g = Matrix2::zeros();
        let mut samples = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
        for dy in -r..=r {
            for dx in -r..=r {
                let (px, py) = (cx + dx as f64, cy + dy as f64);
                let grad = a.gradient(px, py);
                g += grad * grad.transpose();
                samples.push((px, py, a.sample(px, py), grad));
            }
        }
        let inv = g.try_inverse()?;
        let mut d = guess;
        for _ in 0..cfg.iterations {
            let mut rhs = Vector2::zeros();
            for &(px, py, ia, grad) in &samples {
                rhs += grad * (ia - b.sample(px + d.x, py + d.y));
            }
            let step = inv * rhs;
            d += step;
            if step.norm() < cfg.epsilon / s {
                break;
            }
        }
        if !(d.x.is_finite() && d.y.is_finite()) {
            return None;
        }
        guess = if level > 0 { d * 2.0 } else { d };
    }
    let q = Vector2::new(x, y) + guess;
    let w = pa[0].width as f64;
    let h = pa[0].height as f64;
    (q.x >= 0.0 && q.y >= 0.0 && q.x <= w - 1.0 && q.y <= h - 1.0).then_some(q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Descriptor,
    FlowLength,
    Symmetric,
    Smoothness,
    Epipolar,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::Descriptor => "descriptor",
            RejectReason::FlowLength => "flow_length",
            RejectReason::Symmetric => "symmetric",
            RejectReason::Smoothness => "smoothness",
            RejectReason::Epipolar => "epipolar",
        }
    }
}

/// A point `p` of frame A matched to `q` of frame B with its diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub p: [f64; 2],
    pub q: [f64; 2],
    pub descriptor_dist: f64,
    pub flow_len_px: f64,
    pub sym_residual_px: f64,
    pub accepted: bool,
    pub reject_reason: Option<RejectReason>,
}

impl Correspondence {
    /// An accepted pair with zero descriptor distance and symmetric residual.
    pub fn new(p: [f64; 2], q: [f64; 2]) -> Self {
        Self {
            p,
            q,
            descriptor_dist: 0.0,
            flow_len_px: (q[0] - p[0]).hypot(q[1] - p[1]),
            sym_residual_px: 0.0,
            accepted: true,
            reject_reason: None,
        }
    }

    pub fn flow(&self) -> Vector2<f64> {
        Vector2::new(self.q[0] - self.p[0], self.q[1] - self.p[1])
    }

    pub(crate) fn reject(&mut self, reason: RejectReason) {
        self.accepted = false;
        self.reject_reason = Some(reason);
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorrespondenceSet {
    pub pairs: Vec<Correspondence>,
}

#[derive(Debug, Deserialize)]
struct CsvPair {
    #[serde(rename = "uA")]
    ua: f64,
    #[serde(rename = "vA")]
    va: f64,
    #[serde(rename = "uB")]
    ub: f64,
    #[serde(rename = "vB")]
    vb: f64,
}

impl CorrespondenceSet {
    pub fn from_points(pairs: impl IntoIterator<Item = ([f64; 2], [f64; 2])>) -> Self {
        Self {
            pairs: pairs.into_iter().map(|(p, q)| Correspondence::new(p, q)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn accepted_count(&self) -> usize {
        self.pairs.iter().filter(|c| c.accepted).count()
    }

    /// CSV with header `uA,vA,uB,vB`.
    pub fn from_csv_reader(reader: impl Read) -> Result<Self, GeometryError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut pairs = Vec::new();
        for row in rdr.deserialize::<CsvPair>() {
            let r = row?;
            if ![r.ua, r.va, r.ub, r.vb].iter().all(|v| v.is_finite()) {
                return Err(GeometryError::Invalid("non-finite correspondence coordinate".into()));
            }
            pairs.push(([r.ua, r.va], [r.ub, r.vb]));
        }
        Ok(Self::from_points(pairs))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self, GeometryError> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| GeometryError::io(path, e))?;
        Self::from_csv_reader(f)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("uA,vA,uB,vB\n");
        for c in &self.pairs {
            out.push_str(&format!("{},{},{},{}\n", c.p[0], c.p[1], c.q[0], c.q[1]));
        }
        out
    }
}

/// Detects keypoints in `a` and tracks them into `b` and back again.
pub fn track_features(
    a: &GrayImage,
    b: &GrayImage,
    detector: &dyn FeatureDetector,
    cfg: &FlowConfig,
) -> Result<CorrespondenceSet, GeometryError> {
    if a.width != b.width || a.height != b.height {
        return Err(GeometryError::Invalid(format!(
            "frames differ in size: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let levels = cfg.levels.max(1);
    let (pa, pb) = (a.pyramid(levels), b.pyramid(levels));
    let mut set = CorrespondenceSet::default();
    for kp in detector.detect(a) {
        let Some(q) = lk_track(&pa, &pb, kp.x, kp.y, cfg) else { continue };
        let Some(back) = lk_track(&pb, &pa, q.x, q.y, cfg) else { continue };
        let other = detector.describe(b, q.x, q.y);
        let descriptor_dist = kp
            .descriptor
            .iter()
            .zip(&other)
            .map(|(x, y)| f64::from(x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let mut c = Correspondence::new([kp.x, kp.y], [q.x, q.y]);
        c.descriptor_dist = descriptor_dist;
        c.sym_residual_px = (back.x - kp.x).hypot(back.y - kp.y);
        set.pairs.push(c);
    }
    if set.len() < cfg.min_matches {
        return Err(GeometryError::Insufficient {
            needed: cfg.min_matches,
            got: set.len(),
        });
    }
    Ok(set)
}

/// Outlier thresholds; the smoothness test compares each flow with the
/// component-wise median flow of its nearest neighbours in frame A.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterThresholds {
    pub descriptor: f64,
    pub flow_len_px: f64,
    pub symmetric_px: f64,
    pub smoothness_px: f64,
    pub neighbors: usize,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        Self {
            descriptor: 0.5,
            flow_len_px: 200.0,
            symmetric_px: 1.0,
            smoothness_px: 20.0,
            neighbors: 8,
        }
    }
}

impl FilterThresholds {
    pub fn none() -> Self {
        Self {
            descriptor: f64::INFINITY,
            flow_len_px: f64::INFINITY,
            symmetric_px: f64::INFINITY,
            smoothness_px: f64::INFINITY,
            neighbors: 8,
        }
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Deviation of each flow from the median flow of its neighbours.
fn smoothness_deviation(set: &CorrespondenceSet, k: usize) -> Vec<f64> {
    set.pairs
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut near: Vec<(f64, usize)> = set
                .pairs
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, o)| ((o.p[0] - c.p[0]).hypot(o.p[1] - c.p[1]), j))
                .collect();
            if near.is_empty() || k == 0 {
                return 0.0;
            }
            near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            near.truncate(k);
            let mut fx: Vec<f64> = near.iter().map(|&(_, j)| set.pairs[j].flow().x).collect();
            let mut fy: Vec<f64> = near.iter().map(|&(_, j)| set.pairs[j].flow().y).collect();
            let m = Vector2::new(median(&mut fx), median(&mut fy));
            (c.flow() - m).norm()
        })
        .collect()
}

/// Re-evaluates every pair against the thresholds.
pub fn filter_correspondences(set: &CorrespondenceSet, t: &FilterThresholds) -> CorrespondenceSet {
    let dev = if t.smoothness_px.is_finite() {
        smoothness_deviation(set, t.neighbors)
    } else {
        vec![0.0; set.len()]
    };
    let pairs = set
        .pairs
        .iter()
        .zip(dev)
        .map(|(c, d)| {
            let mut c = *c;
            c.accepted = true;
            c.reject_reason = None;
            if !(c.descriptor_dist <= t.descriptor) {
                c.reject(RejectReason::Descriptor);
            } else if !(c.flow_len_px <= t.flow_len_px) {
                c.reject(RejectReason::FlowLength);
            } else if !(c.sym_residual_px <= t.symmetric_px) {
                c.reject(RejectReason::Symmetric);
            } else if !(d <= t.smoothness_px) {
                c.reject(RejectReason::Smoothness);
            }
            c
        })
        .collect();
    CorrespondenceSet { pairs }
}
