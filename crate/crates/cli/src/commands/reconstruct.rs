use std::path::Path;

use endospec::dataset::{load_stack, SpotSet};
use endospec::geometry::{reconstruct, track_features, CorrespondenceSet, GrayImage, PinholeCamera, ProbeRig, Reconstruction};
use log::info;
use serde_json::json;

use super::write_json;
use crate::config::{log_resolved, required, ReconstructSection};
use crate::error::CliError;

pub fn run(r: &ReconstructSection) -> Result<(), CliError> {
    log_resolved("reconstruct", r);
    let out = required(&r.out_ply, "reconstruct.out_ply")?;
    let metrics = required(&r.metrics_json, "reconstruct.metrics_json")?;
    let cam = PinholeCamera::load_json(required(&r.camera, "reconstruct.camera")?)?;
    let rig = match &r.rig {
        Some(p) => ProbeRig::load_json(p)?,
        None => ProbeRig::default(),
    };
    if r.correspondences.is_some() && r.frames.is_some() {
        return Err(CliError::Config("give either correspondences or frames, not both".into()));
    }
    let sl_a = SpotSet::load_csv(required(&r.sl_a, "reconstruct.sl_a")?, cam.width, cam.height)?;
    let sl_b = match &r.sl_b {
        Some(p) => SpotSet::load_csv(p, cam.width, cam.height)?,
        None => sl_a.clone(),
    };

    let outcome = correspondences(r, &cam).and_then(|set| {
        let pairs = set.as_ref().map(|s| (s, r.frame_gap));
        reconstruct(&cam, &rig, (&sl_a, &sl_b), pairs, &r.pipeline).map_err(CliError::from)
    });
    match outcome {
        Ok(rec) => {
            rec.cloud.save_ply(out)?;
            write_json(metrics, &success(&rec))?;
            info!("wrote {} points to {}", rec.cloud.len(), out.display());
            Ok(())
        }
        Err(e) => {
            write_json(metrics, &json!({ "status": "failed", "kind": e.kind(), "error": e.to_string() }))?;
            Err(e)
        }
    }
}

fn correspondences(r: &ReconstructSection, cam: &PinholeCamera) -> Result<Option<CorrespondenceSet>, CliError> {
    if r.sl_only {
        return Ok(None);
    }
    if let Some(p) = &r.correspondences {
        return Ok(Some(CorrespondenceSet::load_csv(p)?));
    }
    let Some([a, b]) = &r.frames else { return Ok(None) };
    let frame = |p: &Path| -> Result<GrayImage, CliError> {
        let stack = load_stack(p)?;
        if stack.width() != cam.width || stack.height() != cam.height {
            return Err(CliError::Data(format!(
                "{} is {}x{}, camera is {}x{}",
                p.display(),
                stack.width(),
                stack.height(),
                cam.width,
                cam.height
            )));
        }
        Ok(GrayImage::from_stack(&stack))
    };
    Ok(Some(track_features(&frame(a)?, &frame(b)?, &r.detector, &r.flow)?))
}

fn success(rec: &Reconstruction) -> serde_json::Value {
    let pose = rec.pose.as_ref().map(|p| {
        let m = p.rotation.matrix();
        json!({
            "rotation": (0..3).map(|i| [m[(i, 0)], m[(i, 1)], m[(i, 2)]]).collect::<Vec<_>>(),
            "translation_mm": [p.translation.x, p.translation.y, p.translation.z],
        })
    });
    json!({
        "status": "ok",
        "mode": if rec.sfm.is_some() { "fused" } else { "sl_only" },
        "scale_status": rec.cloud.scale_status(),
        "points": rec.cloud.len(),
        "stats": rec.stats,
        "pose": pose,
    })
}
