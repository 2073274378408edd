use endospec::dataset::{generate_synthetic_dataset, save_dataset, CameraResponse};
use endospec::geometry::{generate_scene, PointCloud, PointSource, ScaleStatus};
use log::info;

use super::{write_json, write_text};
use crate::config::{log_resolved, required, GenSection};
use crate::error::CliError;

pub fn dataset(g: &GenSection) -> Result<(), CliError> {
    log_resolved("gen", g);
    let out = required(&g.out_dir, "gen.out_dir")?;
    if g.width == 0 || g.height == 0 || g.count == 0 {
        return Err(CliError::Config(format!(
            "gen needs positive count and dimensions, got {} stacks of {}x{}",
            g.count, g.width, g.height
        )));
    }
    let samples = generate_synthetic_dataset(g.count, (g.width, g.height), g.seed, &g.synthetic).map_err(|e| CliError::Config(e.to_string()))?;
    let camera = CameraResponse::default_for(&g.synthetic.wavelengths_nm)?;
    save_dataset(out, &samples, &camera)?;
    info!("wrote {} stacks to {}", samples.len(), out.display());
    Ok(())
}

/// Writes camera, rig, correspondences, both SL spot frames and the ground
/// truth of a synthetic two-frame scene.
pub fn scene(g: &GenSection) -> Result<(), CliError> {
    log_resolved("gen", g);
    let out = required(&g.out_dir, "gen.out_dir")?;
    let scene = generate_scene(&g.scene).map_err(|e| CliError::Config(e.to_string()))?;
    write_json(&out.join("camera.json"), &scene.config.camera)?;
    write_text(&out.join("rig.json"), &scene.config.rig.to_json_string())?;
    write_text(&out.join("correspondences.csv"), &scene.correspondences.to_csv_string())?;
    write_text(&out.join("sl_a.csv"), &scene.sl_a.to_csv_string())?;
    write_text(&out.join("sl_b.csv"), &scene.sl_b.to_csv_string())?;

    let mut truth = PointCloud::new(ScaleStatus::Metric);
    for (i, p) in scene.truth.iter().enumerate() {
        truth.push(*p, PointSource::Motion, i as u64)?;
    }
    for (id, p) in &scene.sl_truth {
        truth.push(*p, PointSource::StructuredLight, u64::from(*id))?;
    }
    truth.save_ply(out.join("truth.ply"))?;

    let r = scene.pose.rotation.matrix();
    let meta = serde_json::json!({
        "config": scene.config,
        "rotation": (0..3).map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]).collect::<Vec<_>>(),
        "translation_mm": [scene.pose.translation.x, scene.pose.translation.y, scene.pose.translation.z],
        "outliers": scene.outlier.iter().filter(|&&o| o).count(),
    });
    write_json(&out.join("scene.json"), &meta)?;
    info!(
        "wrote scene with {} correspondences and {} spots to {}",
        scene.correspondences.len(),
        scene.sl_a.len(),
        out.display()
    );
    Ok(())
}
