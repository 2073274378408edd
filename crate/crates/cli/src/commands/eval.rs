use endospec::dataset::{load_dataset, save_stack};
use endospec::models::{load_params, ArchConfig};
use endospec::training::{evaluate, predict_samples, run_loocv, transfer_matrix};
use log::info;

use super::write_json;
use crate::config::{log_resolved, required, EvalSection};
use crate::error::CliError;

pub fn run(e: &EvalSection) -> Result<(), CliError> {
    log_resolved("eval", e);
    if e.loocv && e.transfer {
        return Err(CliError::Config("choose one of --loocv and --transfer".into()));
    }
    let out = required(&e.report_json, "eval.report_json")?;
    if e.transfer {
        return transfer(e, out);
    }
    let (samples, _) = load_dataset(required(&e.dataset_dir, "eval.dataset_dir")?)?;
    let first = samples.first().ok_or_else(|| CliError::Data("dataset holds no stacks".into()))?;

    if e.loocv {
        let arch = ArchConfig::for_bands(first.rgb.channels(), first.hsi.wavelengths_nm().to_vec(), e.hidden_features)?;
        let mut train = e.train.clone();
        train.psnr_mode = e.psnr_mode;
        let mut cv = e.cv.clone();
        cv.saturation_threshold = e.saturation_threshold;
        let report = run_loocv(&samples, &arch, &train, &cv)?;
        write_json(out, &report)?;
        info!("wrote {}-fold report to {}", report.k, out.display());
        return Ok(());
    }

    let params = load_params(required(&e.params, "eval.params")?)?;
    let items = predict_samples(&params, &samples)?;
    let report = evaluate(&items, e.psnr_mode, e.saturation_threshold)?;
    if let Some(dir) = &e.predictions_dir {
        std::fs::create_dir_all(dir).map_err(|err| CliError::Data(format!("{}: {err}", dir.display())))?;
        for ((id, pred, _), map) in items.iter().zip(&report.psnr_maps) {
            save_stack(pred, dir.join(format!("{id}.pred.json")))?;
            save_stack(&map.to_stack(), dir.join(format!("{id}.psnr.json")))?;
        }
        info!("wrote {} predictions to {}", items.len(), dir.display());
    }
    write_json(out, &report)?;
    info!("mean PSNR {:.3} dB over {} stacks", report.mean_psnr, report.per_stack.len());
    Ok(())
}

fn transfer(e: &EvalSection, out: &std::path::Path) -> Result<(), CliError> {
    if e.sources.len() < 2 {
        return Err(CliError::Config("eval.sources needs at least two named datasets for --transfer".into()));
    }
    let mut named = Vec::with_capacity(e.sources.len());
    for s in &e.sources {
        named.push((s.name.clone(), load_dataset(&s.dataset_dir)?.0));
    }
    let first = named
        .iter()
        .find_map(|(_, s)| s.first())
        .ok_or_else(|| CliError::Data("every source is empty".into()))?;
    let arch = ArchConfig::for_bands(first.rgb.channels(), first.hsi.wavelengths_nm().to_vec(), e.hidden_features)?;
    let mut train = e.train.clone();
    train.psnr_mode = e.psnr_mode;
    let mut cv = e.cv.clone();
    cv.saturation_threshold = e.saturation_threshold;
    let table = transfer_matrix(&named, &arch, &train, &cv)?;
    write_json(out, &table)?;
    info!("wrote {}x{} transfer table to {}", named.len(), named.len(), out.display());
    Ok(())
}
