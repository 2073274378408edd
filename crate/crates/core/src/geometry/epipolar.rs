use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Rotation3, Vector2, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sl::ray_meet;
use super::{CorrespondenceSet, GeometryError, PinholeCamera, PointCloud, PointSource, RejectReason, ScaleStatus};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Sampson distance threshold in normalized image coordinates.
    pub threshold: f64,
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            threshold: 1e-3,
            min_inliers: 8,
            seed: 0,
        }
    }
}

pub fn skew(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

/// Translation and isotropic scaling moving the centroid to the origin with
/// mean distance √2.
fn conditioning(pts: &[Vector2<f64>]) -> Matrix3<f64> {
    let n = pts.len() as f64;
    let c = pts.iter().fold(Vector2::zeros(), |a, p| a + p) / n;
    let mean_dist = pts.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    let s = if mean_dist > 0.0 { std::f64::consts::SQRT_2 / mean_dist } else { 1.0 };
    Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
}

/// Replaces the singular values by `(σ, σ, 0)` with `σ = 1/√2`, giving unit
/// Frobenius norm.
pub fn project_to_essential(e: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = e.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let s = std::f64::consts::FRAC_1_SQRT_2;
    u * Matrix3::from_diagonal(&Vector3::new(s, s, 0.0)) * vt
}

/// Normalized eight-point estimate from at least eight pairs of normalized
/// image coordinates.
pub fn essential_from_pairs(p: &[Vector2<f64>], q: &[Vector2<f64>]) -> Option<Matrix3<f64>> {
    let n = p.len();
    if n < 8 || q.len() != n {
        return None;
    }
    let (t1, t2) = (conditioning(p), conditioning(q));
    // a zero row keeps the SVD square so the null vector is always present
    let mut a = DMatrix::zeros(n.max(9), 9);
    for i in 0..n {
        let x = t1 * p[i].push(1.0);
        let y = t2 * q[i].push(1.0);
        let row = [y.x * x.x, y.x * x.y, y.x, y.y * x.x, y.y * x.y, y.y, x.x, x.y, 1.0];
        for (j, v) in row.iter().enumerate() {
            a[(i, j)] = *v;
        }
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t?;
    let k = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)?;
    let f = vt.row(k);
    let en = Matrix3::new(f[0], f[1], f[2], f[3], f[4], f[5], f[6], f[7], f[8]);
    let e = t2.transpose() * en * t1;
    let e = project_to_essential(&e);
    e.iter().all(|v| v.is_finite()).then_some(e)
}

/// First-order geometric distance of a pair to the epipolar constraint.
pub fn sampson_distance(e: &Matrix3<f64>, p: &Vector2<f64>, q: &Vector2<f64>) -> f64 {
    let (x1, x2) = (p.push(1.0), q.push(1.0));
    let ex1 = e * x1;
    let etx2 = e.transpose() * x2;
    let num = x2.dot(&ex1);
    let den = ex1.x * ex1.x + ex1.y * ex1.y + etx2.x * etx2.x + etx2.y * etx2.y;
    if den <= 0.0 {
        return f64::INFINITY;
    }
    num.abs() / den.sqrt()
}

pub fn epipolar_residual(e: &Matrix3<f64>, p: &Vector2<f64>, q: &Vector2<f64>) -> f64 {
    q.push(1.0).dot(&(e * p.push(1.0))).abs()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EssentialEstimate {
    pub e: Matrix3<f64>,
    /// One flag per pair of the input set; pairs that were not accepted on
    /// input are never inliers.
    pub inliers: Vec<bool>,
}

impl EssentialEstimate {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }

    /// The input set with RANSAC outliers rejected.
    pub fn apply(&self, set: &CorrespondenceSet) -> CorrespondenceSet {
        let mut out = set.clone();
        for (c, &inl) in out.pairs.iter_mut().zip(&self.inliers) {
            if c.accepted && !inl {
                c.reject(RejectReason::Epipolar);
            }
        }
        out
    }
}

fn normalized(set: &CorrespondenceSet, cam: &PinholeCamera) -> (Vec<Vector2<f64>>, Vec<Vector2<f64>>) {
    set.pairs
        .iter()
        .map(|c| (cam.normalize(c.p[0], c.p[1]), cam.normalize(c.q[0], c.q[1])))
        .unzip()
}

/// RANSAC over eight-point minimal sets of the accepted pairs, followed by
/// re-estimation on the inliers until the inlier set settles.
pub fn estimate_essential(set: &CorrespondenceSet, cam: &PinholeCamera, cfg: &RansacConfig) -> Result<EssentialEstimate, GeometryError> {
    let (p, q) = normalized(set, cam);
    let usable: Vec<usize> = (0..set.len()).filter(|&i| set.pairs[i].accepted).collect();
    if usable.len() < 8 {
        return Err(GeometryError::Insufficient {
            needed: 8,
            got: usable.len(),
        });
    }
    if usable.iter().all(|&i| (p[i] - q[i]).norm() < 1e-12) {
        return Err(GeometryError::Degenerate("no parallax between the frames".into()));
    }
    let mask_of = |e: &Matrix3<f64>| -> Vec<bool> {
        let mut m = vec![false; set.len()];
        for &i in &usable {
            m[i] = sampson_distance(e, &p[i], &q[i]) < cfg.threshold;
        }
        m
    };
    let count = |m: &[bool]| m.iter().filter(|&&b| b).count();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(usize, Matrix3<f64>)> = None;
    for _ in 0..cfg.iterations.max(1) {
        let pick: Vec<usize> = sample(&mut rng, usable.len(), 8).into_iter().map(|k| usable[k]).collect();
        let sp: Vec<_> = pick.iter().map(|&i| p[i]).collect();
        let sq: Vec<_> = pick.iter().map(|&i| q[i]).collect();
        let Some(e) = essential_from_pairs(&sp, &sq) else { continue };
        let n = count(&mask_of(&e));
        if best.as_ref().map_or(true, |b| n > b.0) {
            best = Some((n, e));
        }
    }
    let Some((n, mut e)) = best else {
        return Err(GeometryError::Degenerate("no minimal sample produced a model".into()));
    };
    if n < cfg.min_inliers.max(8) {
        return Err(GeometryError::Degenerate(format!("best model has {n} inliers, need {}", cfg.min_inliers.max(8))));
    }
    let mut mask = mask_of(&e);
    for _ in 0..10 {
        let idx: Vec<usize> = (0..set.len()).filter(|&i| mask[i]).collect();
        let ip: Vec<_> = idx.iter().map(|&i| p[i]).collect();
        let iq: Vec<_> = idx.iter().map(|&i| q[i]).collect();
        let Some(refined) = essential_from_pairs(&ip, &iq).and_then(|lin| refine_essential(&lin, &ip, &iq)) else {
            break;
        };
        let next = mask_of(&refined);
        if count(&next) < count(&mask) {
            break;
        }
        e = refined;
        if next == mask {
            break;
        }
        mask = next;
    }
    Ok(EssentialEstimate { e, inliers: mask })
}

fn signed_sampson(e: &Matrix3<f64>, p: &Vector2<f64>, q: &Vector2<f64>) -> f64 {
    let (x1, x2) = (p.push(1.0), q.push(1.0));
    let ex1 = e * x1;
    let etx2 = e.transpose() * x2;
    let den = (ex1.x * ex1.x + ex1.y * ex1.y + etx2.x * etx2.x + etx2.y * etx2.y).sqrt();
    x2.dot(&ex1) / den.max(1e-300)
}

/// Levenberg-Marquardt on the Sampson residuals over rotation and unit
/// translation, started from the chirality-preferred factorization of `e`.
/// The linear estimate is poorly conditioned on shallow surfaces; this
/// recovers the geometric optimum.
fn refine_essential(e: &Matrix3<f64>, p: &[Vector2<f64>], q: &[Vector2<f64>]) -> Option<Matrix3<f64>> {
    let cands = pose_candidates(e).ok()?;
    let start = cands
        .iter()
        .max_by_key(|c| p.iter().zip(q).filter(|(a, b)| in_front(c, a, b)).count())?;
    let (mut r, mut t) = (start.rotation, start.translation);
    let build = |r: &Rotation3<f64>, t: &Vector3<f64>| skew(t) * r.matrix() * std::f64::consts::FRAC_1_SQRT_2;
    let residuals = |m: &Matrix3<f64>| -> DVector<f64> { DVector::from_iterator(p.len(), p.iter().zip(q).map(|(a, b)| signed_sampson(m, a, b))) };
    let perturb = |r: &Rotation3<f64>, t: &Vector3<f64>, d: &[f64]| {
        let b1 = t.cross(&if t.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() }).normalize();
        let b2 = t.cross(&b1);
        let r2 = Rotation3::new(Vector3::new(d[0], d[1], d[2])) * r;
        let t2 = (t + b1 * d[3] + b2 * d[4]).normalize();
        (r2, t2)
    };
    let mut cost = residuals(&build(&r, &t)).norm_squared();
    let mut lambda = 1e-3;
    for _ in 0..100 {
        let r0 = residuals(&build(&r, &t));
        let mut jac = DMatrix::zeros(p.len(), 5);
        for k in 0..5 {
            let mut d = [0.0; 5];
            d[k] = 1e-7;
            let (rp, tp) = perturb(&r, &t, &d);
            d[k] = -1e-7;
            let (rm, tm) = perturb(&r, &t, &d);
            let col = (residuals(&build(&rp, &tp)) - residuals(&build(&rm, &tm))) / 2e-7;
            jac.set_column(k, &col);
        }
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &r0;
        let mut improved = false;
        for _ in 0..10 {
            let mut a = jtj.clone();
            for k in 0..5 {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&(-&g)) else { break };
            let (rn, tn) = perturb(&r, &t, step.as_slice());
            let c = residuals(&build(&rn, &tn)).norm_squared();
            if c < cost {
                let gain = cost - c;
                r = rn;
                t = tn;
                cost = c;
                lambda = (lambda * 0.3).max(1e-12);
                improved = gain > 1e-15 * cost.max(1e-300);
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    let e = build(&r, &t);
    e.iter().all(|v| v.is_finite()).then_some(e)
}

/// Relative motion with `X_B = R X_A + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    /// Camera B center in frame A.
    pub fn center_b(&self) -> Vector3<f64> {
        -(self.rotation.inverse() * self.translation)
    }

    pub fn essential(&self) -> Matrix3<f64> {
        skew(&self.translation) * self.rotation.matrix()
    }
}

/// The four factorizations of an essential matrix.
pub fn pose_candidates(e: &Matrix3<f64>) -> Result<[Pose; 4], GeometryError> {
    if e.norm() < 1e-12 {
        return Err(GeometryError::Degenerate("essential matrix vanishes (no motion)".into()));
    }
    let svd = e.svd(true, true);
    let (mut u, mut vt) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    if u.determinant() < 0.0 {
        u = -u;
    }
    if vt.determinant() < 0.0 {
        vt = -vt;
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = Rotation3::from_matrix_unchecked(u * w * vt);
    let r2 = Rotation3::from_matrix_unchecked(u * w.transpose() * vt);
    let t: Vector3<f64> = u.column(2).into_owned().normalize();
    Ok([
        Pose { rotation: r1, translation: t },
        Pose { rotation: r1, translation: -t },
        Pose { rotation: r2, translation: t },
        Pose { rotation: r2, translation: -t },
    ])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseRecovery {
    pub pose: Pose,
    /// Points in front of both cameras for each candidate.
    pub in_front: [usize; 4],
    pub chosen: usize,
}

fn in_front(pose: &Pose, p: &Vector2<f64>, q: &Vector2<f64>) -> bool {
    let d1 = p.push(1.0);
    let d2 = pose.rotation.inverse() * q.push(1.0);
    match ray_meet(&Vector3::zeros(), &d1, &pose.center_b(), &d2) {
        Some(m) => {
            let xb = pose.rotation * m.midpoint + pose.translation;
            m.midpoint.z > 0.0 && xb.z > 0.0
        }
        None => false,
    }
}

/// Chirality test over the inlier pairs.
pub fn recover_pose(e: &Matrix3<f64>, set: &CorrespondenceSet, inliers: &[bool], cam: &PinholeCamera) -> Result<PoseRecovery, GeometryError> {
    let (p, q) = normalized(set, cam);
    let idx: Vec<usize> = (0..set.len()).filter(|&i| inliers.get(i).copied().unwrap_or(false)).collect();
    if idx.is_empty() {
        return Err(GeometryError::Insufficient { needed: 1, got: 0 });
    }
    let cands = pose_candidates(e)?;
    let mut counts = [0usize; 4];
    for (k, c) in cands.iter().enumerate() {
        counts[k] = idx.iter().filter(|&&i| in_front(c, &p[i], &q[i])).count();
    }
    let best = *counts.iter().max().expect("four candidates");
    if best == 0 {
        return Err(GeometryError::Degenerate("no candidate places points in front of both cameras".into()));
    }
    let winners: Vec<usize> = (0..4).filter(|&k| counts[k] == best).collect();
    if winners.len() > 1 {
        return Err(GeometryError::Ambiguous(format!("candidates {winners:?} tie with {best} points in front")));
    }
    Ok(PoseRecovery {
        pose: cands[winners[0]],
        in_front: counts,
        chosen: winners[0],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriangulationMethod {
    #[default]
    Midpoint,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TwoViewDrop {
    Parallel,
    Behind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoViewCloud {
    /// Up-to-scale points in frame A labelled by pair index.
    pub cloud: PointCloud,
    /// RMS reprojection error over both views, pixels, per kept point.
    pub reprojection_px: Vec<f64>,
    pub dropped: Vec<(usize, TwoViewDrop)>,
}

fn linear_point(pose: &Pose, p: &Vector2<f64>, q: &Vector2<f64>) -> Option<Vector3<f64>> {
    let r = pose.rotation.matrix();
    let t = pose.translation;
    let p2 = |row: usize| [r[(row, 0)], r[(row, 1)], r[(row, 2)], t[row]];
    let p1 = |row: usize| {
        let mut v = [0.0; 4];
        v[row] = 1.0;
        v
    };
    let rows = [
        (p1(0), p1(2), p.x),
        (p1(1), p1(2), p.y),
        (p2(0), p2(2), q.x),
        (p2(1), p2(2), q.y),
    ];
    let mut a = Matrix4::zeros();
    for (i, (ra, rz, x)) in rows.iter().enumerate() {
        for j in 0..4 {
            a[(i, j)] = x * rz[j] - ra[j];
        }
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t?;
    let k = svd.singular_values.imin();
    let h = vt.row(k);
    (h[3].abs() > 1e-15).then(|| Vector3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]))
}

pub fn triangulate_two_view(
    pose: &Pose,
    set: &CorrespondenceSet,
    inliers: &[bool],
    cam: &PinholeCamera,
    method: TriangulationMethod,
) -> Result<TwoViewCloud, GeometryError> {
    let (p, q) = normalized(set, cam);
    let mut cloud = PointCloud::new(ScaleStatus::UpToScale);
    let mut reprojection_px = Vec::new();
    let mut dropped = Vec::new();
    for i in (0..set.len()).filter(|&i| inliers.get(i).copied().unwrap_or(false)) {
        let d2 = pose.rotation.inverse() * q[i].push(1.0);
        let Some(meet) = ray_meet(&Vector3::zeros(), &p[i].push(1.0), &pose.center_b(), &d2) else {
            dropped.push((i, TwoViewDrop::Parallel));
            continue;
        };
        if meet.angle < 1e-9 {
            dropped.push((i, TwoViewDrop::Parallel));
            continue;
        }
        let x = match method {
            TriangulationMethod::Midpoint => meet.midpoint,
            TriangulationMethod::Linear => match linear_point(pose, &p[i], &q[i]) {
                Some(x) => x,
                None => {
                    dropped.push((i, TwoViewDrop::Parallel));
                    continue;
                }
            },
        };
        let xb = pose.rotation * x + pose.translation;
        if !(x.z > 0.0 && xb.z > 0.0) {
            dropped.push((i, TwoViewDrop::Behind));
            continue;
        }
        let c = &set.pairs[i];
        let ea = cam.project(&x).map(|u| (u.x - c.p[0]).hypot(u.y - c.p[1]));
        let eb = cam.project(&xb).map(|u| (u.x - c.q[0]).hypot(u.y - c.q[1]));
        let (Some(ea), Some(eb)) = (ea, eb) else {
            dropped.push((i, TwoViewDrop::Behind));
            continue;
        };
        cloud.push(x, PointSource::Motion, i as u64)?;
        reprojection_px.push(((ea * ea + eb * eb) * 0.5).sqrt());
    }
    Ok(TwoViewCloud {
        cloud,
        reprojection_px,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(pose: &Pose, cam: &PinholeCamera) -> CorrespondenceSet {
        let mut pairs = Vec::new();
        for i in 0..40 {
            let x = Vector3::new(-6.0 + (i % 8) as f64 * 1.7, -4.0 + (i / 8) as f64 * 2.1, 25.0 + ((i * 7) % 11) as f64);
            let xb = pose.rotation * x + pose.translation;
            let (a, b) = (cam.project(&x).unwrap(), cam.project(&xb).unwrap());
            pairs.push(([a.x, a.y], [b.x, b.y]));
        }
        CorrespondenceSet::from_points(pairs)
    }

    #[test]
    fn pure_translation_gives_cross_product_matrix() {
        let cam = PinholeCamera::default();
        let pose = Pose {
            rotation: Rotation3::identity(),
            translation: Vector3::new(1.0, 0.0, 0.0),
        };
        let set = scene(&pose, &cam);
        let est = estimate_essential(&set, &cam, &RansacConfig::default()).unwrap();
        let expected = skew(&Vector3::x()) * std::f64::consts::FRAC_1_SQRT_2;
        let sign = if est.e[(2, 1)] > 0.0 { 1.0 } else { -1.0 };
        assert!((est.e * sign - expected).norm() < 1e-9, "{}", est.e);
        let (p, q) = normalized(&set, &cam);
        for i in 0..set.len() {
            assert!(epipolar_residual(&est.e, &p[i], &q[i]) < 1e-9);
        }
    }

    #[test]
    fn projection_enforces_equal_singular_values() {
        let m = Matrix3::new(1.0, 2.0, 3.0, -1.0, 0.5, 2.0, 0.3, 0.2, -4.0);
        let sv = project_to_essential(&m).singular_values();
        let mut s: Vec<f64> = sv.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        assert!((s[0] - s[1]).abs() < 1e-12 * s[0] && s[2] < 1e-12 * s[0]);
    }

    #[test]
    fn too_few_pairs_rejected() {
        let set = CorrespondenceSet::from_points((0..7).map(|i| ([i as f64, 1.0], [i as f64 + 1.0, 2.0])));
        let err = estimate_essential(&set, &PinholeCamera::default(), &RansacConfig::default()).unwrap_err();
        assert!(matches!(err, GeometryError::Insufficient { needed: 8, got: 7 }));
    }

    #[test]
    fn identity_motion_rejected() {
        let set = CorrespondenceSet::from_points((0..12).map(|i| ([i as f64 * 9.0, 40.0 + i as f64], [i as f64 * 9.0, 40.0 + i as f64])));
        let cam = PinholeCamera::default();
        assert!(matches!(estimate_essential(&set, &cam, &RansacConfig::default()), Err(GeometryError::Degenerate(_))));
        assert!(matches!(recover_pose(&Matrix3::zeros(), &set, &[true; 12], &cam), Err(GeometryError::Degenerate(_))));
    }

    #[test]
    fn linear_and_midpoint_agree_without_noise() {
        let cam = PinholeCamera::default();
        let pose = Pose {
            rotation: Rotation3::from_axis_angle(&Vector3::y_axis(), 0.05),
            translation: Vector3::new(1.0, 0.1, 0.2).normalize(),
        };
        let set = scene(&pose, &cam);
        let all = vec![true; set.len()];
        let a = triangulate_two_view(&pose, &set, &all, &cam, TriangulationMethod::Midpoint).unwrap();
        let b = triangulate_two_view(&pose, &set, &all, &cam, TriangulationMethod::Linear).unwrap();
        for (x, y) in a.cloud.points().iter().zip(b.cloud.points()) {
            assert!((x - y).norm() < 1e-8);
        }
        assert!(a.reprojection_px.iter().all(|&e| e < 1e-9));
    }
}
