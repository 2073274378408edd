use std::path::PathBuf;

use endospec::dataset::load_dataset;
use endospec::models::{build_model1, load_params, save_params, ArchConfig, ArchId};
use endospec::training::{train_model1, train_model2, StageSummary, TrainError};
use log::{info, warn};
use serde::Serialize;

use super::{write_json, write_text};
use crate::config::{log_resolved, required, TrainSection};
use crate::error::CliError;

#[derive(Serialize)]
struct StageReport {
    final_loss: f64,
    best_epoch: usize,
    epochs_run: usize,
}

#[derive(Serialize)]
struct TrainSummary {
    model: ArchId,
    parameters: usize,
    stages: Vec<(String, StageReport)>,
}

pub fn run(t: &TrainSection) -> Result<(), CliError> {
    log_resolved("train", t);
    let dataset = required(&t.dataset_dir, "train.dataset_dir")?;
    let out = required(&t.out_params, "train.out_params")?;
    if t.model == 2 && t.init_model1.is_none() {
        return Err(CliError::Config("model 2 training needs a trained model 1 (`--init-model1`)".into()));
    }
    if !(1..=2).contains(&t.model) {
        return Err(CliError::Config(format!("model must be 1 or 2, got {}", t.model)));
    }
    t.config.validate()?;
    let (samples, _) = load_dataset(dataset)?;
    let first = samples.first().ok_or_else(|| CliError::Data("dataset holds no stacks".into()))?;

    let result = if t.model == 1 {
        let arch = ArchConfig::for_bands(first.rgb.channels(), first.hsi.wavelengths_nm().to_vec(), t.hidden_features)?;
        train_model1(&samples, build_model1(&arch, t.init_seed)?, &t.config).map(|o| {
            let stage = StageReport {
                final_loss: o.final_loss,
                best_epoch: o.best_epoch,
                epochs_run: o.epochs_run,
            };
            (o.params, o.log, vec![("model1".to_string(), stage)])
        })
    } else {
        let init = load_params(required(&t.init_model1, "train.init_model1")?)?;
        if init.arch() != ArchId::Model1 {
            return Err(CliError::Config(format!("--init-model1 holds {:?} parameters", init.arch())));
        }
        train_model2(&samples, &init, &t.config).map(|o| {
            let report = |s: StageSummary| StageReport {
                final_loss: s.final_loss,
                best_epoch: s.best_epoch,
                epochs_run: s.epochs_run,
            };
            let stages = vec![("stage_a".to_string(), report(o.stage_a)), ("stage_b".to_string(), report(o.stage_b))];
            (o.params, o.log, stages)
        })
    };
    let (params, log, stages) = match result {
        Ok(r) => r,
        Err(TrainError::Diverged { stage, epoch, checkpoint }) => {
            let mut path = out.as_os_str().to_owned();
            path.push(".checkpoint.json");
            let path = PathBuf::from(path);
            save_params(&checkpoint, &path)?;
            warn!("best parameters before divergence saved to {}", path.display());
            return Err(CliError::Numeric(format!("{stage}: loss diverged at epoch {epoch}")));
        }
        Err(e) => return Err(e.into()),
    };

    save_params(&params, out)?;
    if let Some(p) = &t.log_csv {
        write_text(p, &log.to_csv_string())?;
    }
    if let Some(p) = &t.summary_json {
        write_json(
            p,
            &TrainSummary {
                model: params.arch(),
                parameters: params.parameter_count(),
                stages,
            },
        )?;
    }
    info!("saved {:?} parameters to {}", params.arch(), out.display());
    Ok(())
}
