use serde::{Deserialize, Serialize};

use super::{
    estimate_essential, filter_correspondences, recover_pose, register_scale, triangulate_sl, triangulate_two_view,
    CorrespondenceSet, FilterThresholds, GeometryError, PinholeCamera, PointCloud, Pose, ProbeRig, RansacConfig,
    ScaleConfig, SlConfig, TriangulationMethod,
};
use crate::dataset::SpotSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub filter: FilterThresholds,
    pub ransac: RansacConfig,
    pub triangulation: TriangulationMethod,
    pub sl: SlConfig,
    pub scale: ScaleConfig,
    /// Frames further apart than this are not assumed to see a rigid surface.
    pub max_frame_gap: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            filter: FilterThresholds::default(),
            ransac: RansacConfig::default(),
            triangulation: TriangulationMethod::Midpoint,
            sl: SlConfig::default(),
            scale: ScaleConfig::default(),
            max_frame_gap: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionStats {
    pub correspondences: usize,
    pub filtered: usize,
    pub inliers: usize,
    pub triangulated: usize,
    pub sl_points: usize,
    pub scale: Option<f64>,
    pub scale_pairs: usize,
    pub scale_residual_rms_mm: Option<f64>,
    pub mean_reprojection_px: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    /// Metric SfM points followed by the averaged SL points.
    pub cloud: PointCloud,
    /// Metric SfM points alone, labelled by correspondence index.
    pub sfm: Option<PointCloud>,
    pub pose: Option<Pose>,
    pub stats: ReconstructionStats,
}

/// SL triangulation of two spot frames, plus, when correspondences between
/// white-light frames `frame_gap` apart are given, SfM scaled onto the SL
/// reference.
pub fn reconstruct(
    cam: &PinholeCamera,
    rig: &ProbeRig,
    sl: (&SpotSet, &SpotSet),
    correspondences: Option<(&CorrespondenceSet, usize)>,
    cfg: &PipelineConfig,
) -> Result<Reconstruction, GeometryError> {
    let sl_a = triangulate_sl(sl.0, cam, rig, &cfg.sl)?.cloud;
    let sl_b = triangulate_sl(sl.1, cam, rig, &cfg.sl)?.cloud;
    let reference = super::scale::average_sl(&sl_a, &sl_b)?;
    let mut stats = ReconstructionStats {
        correspondences: 0,
        filtered: 0,
        inliers: 0,
        triangulated: 0,
        sl_points: reference.len(),
        scale: None,
        scale_pairs: 0,
        scale_residual_rms_mm: None,
        mean_reprojection_px: None,
    };
    let Some((set, gap)) = correspondences else {
        return Ok(Reconstruction {
            cloud: reference,
            sfm: None,
            pose: None,
            stats,
        });
    };
    if gap > cfg.max_frame_gap {
        return Err(GeometryError::Invalid(format!(
            "frames {gap} apart exceed the rigidity window of {}",
            cfg.max_frame_gap
        )));
    }
    stats.correspondences = set.len();
    let filtered = filter_correspondences(set, &cfg.filter);
    stats.filtered = filtered.accepted_count();
    let est = estimate_essential(&filtered, cam, &cfg.ransac)?;
    stats.inliers = est.inlier_count();
    let pose = recover_pose(&est.e, &filtered, &est.inliers, cam)?.pose;
    let tv = triangulate_two_view(&pose, &filtered, &est.inliers, cam, cfg.triangulation)?;
    stats.triangulated = tv.cloud.len();
    if !tv.reprojection_px.is_empty() {
        stats.mean_reprojection_px = Some(tv.reprojection_px.iter().sum::<f64>() / tv.reprojection_px.len() as f64);
    }
    let fit = register_scale(&tv.cloud, (&sl_a, &sl_b), &cfg.scale)?;
    stats.scale = Some(fit.scale);
    stats.scale_pairs = fit.pairs_used;
    stats.scale_residual_rms_mm = Some(fit.residual_rms_mm);
    let mut cloud = fit.cloud.clone();
    cloud.extend(&reference)?;
    Ok(Reconstruction {
        cloud,
        sfm: Some(fit.cloud),
        pose: Some(Pose {
            rotation: pose.rotation,
            translation: pose.translation * fit.scale,
        }),
        stats,
    })
}
