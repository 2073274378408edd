//! Training loops: per-pixel mini-batches for Model 1, per-image batches and
//! the two-stage schedule for Model 2.

use std::fmt::Write as _;

use log::{debug, info, warn};
use rand::seq::{index::sample, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::psnr::{inf_f64, psnr_from_mse};
use super::{PsnrMode, TrainError};
use crate::dataset::{Sample, Transform};
use crate::models::{
    init_model2_from, model1_loss_grad, model2_loss_grad, ArchId, Model2Inputs, NetworkParams, MODEL1_PREFIX,
};
use crate::tensorcore::{adam_step, AdamConfig, AdamState, Tensor};

const SUB_BATCH: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f32,
    /// Learning rate reached at `max_epochs` under exponential decay;
    /// `None` keeps `lr` constant.
    pub lr_final: Option<f32>,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    /// Pixels per step for Model 1.
    pub batch_size: usize,
    /// Images (or crops) per step for Model 2.
    pub image_batch_size: usize,
    pub max_epochs: usize,
    /// Epoch caps for the two Model 2 stages; `None` uses `max_epochs`.
    pub stage_a_epochs: Option<usize>,
    pub stage_b_epochs: Option<usize>,
    pub plateau_patience: usize,
    pub seed: u64,
    pub psnr_mode: PsnrMode,
    /// Random subset of training pixels visited per Model 1 epoch.
    pub pixels_per_epoch: Option<usize>,
    /// Fixed subset of pixels used to monitor Model 1 loss.
    pub monitor_pixels: Option<usize>,
    /// Random crop applied to each Model 2 training image per step.
    pub crop: Option<(usize, usize)>,
    /// Fraction of training stacks held out to monitor the loss. With 0 the
    /// training loss itself is monitored.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            lr_final: None,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 256,
            image_batch_size: 4,
            max_epochs: 200,
            stage_a_epochs: None,
            stage_b_epochs: None,
            plateau_patience: 20,
            seed: 0,
            psnr_mode: PsnrMode::Paper,
            pixels_per_epoch: None,
            monitor_pixels: Some(8192),
            crop: None,
            validation_fraction: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive and finite");
        }
        if self.lr_final.is_some_and(|l| !(l > 0.0 && l.is_finite())) {
            return bad("lr_final must be positive and finite");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if self.batch_size == 0 || self.image_batch_size == 0 {
            return bad("batch sizes must be at least 1");
        }
        if self.pixels_per_epoch == Some(0) || self.monitor_pixels == Some(0) {
            return bad("pixel subsets must be nonempty");
        }
        if self.crop.is_some_and(|(w, h)| w == 0 || h == 0) {
            return bad("crop must be nonempty");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        Ok(())
    }

    /// Learning rate for 1-based `epoch` of a stage with `epochs` epochs.
    pub fn lr_at(&self, epoch: usize, epochs: usize) -> f32 {
        match self.lr_final {
            Some(end) if epochs > 1 => {
                let t = (epoch.saturating_sub(1)) as f64 / (epochs - 1) as f64;
                (f64::from(self.lr) * (f64::from(end) / f64::from(self.lr)).powf(t)) as f32
            }
            _ => self.lr,
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub stage: String,
    pub epoch: usize,
    pub split: String,
    #[serde(with = "inf_f64")]
    pub loss: f64,
    #[serde(with = "inf_f64")]
    pub psnr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("stage,epoch,split,loss,psnr\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{}", r.stage, r.epoch, r.split, r.loss, r.psnr);
        }
        s
    }

    pub fn last_loss(&self, stage: &str) -> Option<f64> {
        self.rows.iter().rev().find(|r| r.stage == stage).map(|r| r.loss)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub log: TrainLog,
    /// Monitored loss of the returned parameters.
    pub final_loss: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

#[derive(Debug, Clone)]
pub struct Model2Outcome {
    pub params: NetworkParams,
    pub log: TrainLog,
    pub stage_a: StageSummary,
    pub stage_b: StageSummary,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageSummary {
    pub final_loss: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

/// Splits samples into (train, validation) when a validation fraction is set.
fn holdout<'a>(samples: &'a [Sample], cfg: &TrainConfig) -> (Vec<&'a Sample>, Vec<&'a Sample>) {
    let n_val = (samples.len() as f64 * cfg.validation_fraction).floor() as usize;
    if n_val == 0 || n_val >= samples.len() {
        return (samples.iter().collect(), Vec::new());
    }
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7a11_da7e));
    let (val, train) = idx.split_at(n_val);
    let mut train: Vec<usize> = train.to_vec();
    let mut val: Vec<usize> = val.to_vec();
    train.sort_unstable();
    val.sort_unstable();
    (
        train.iter().map(|&i| &samples[i]).collect(),
        val.iter().map(|&i| &samples[i]).collect(),
    )
}

/// Weighted sum of per-chunk `(loss, grads)` in chunk order.
fn reduce(parts: Vec<(f64, Vec<Tensor>, usize)>) -> (f64, Vec<Tensor>) {
    let total: usize = parts.iter().map(|p| p.2).sum();
    let mut it = parts.into_iter();
    let (l0, mut g, n0) = it.next().expect("nonempty batch");
    let w0 = n0 as f32 / total as f32;
    for t in &mut g {
        for v in t.data_mut() {
            *v *= w0;
        }
    }
    let mut loss = l0 * n0 as f64;
    for (l, gi, n) in it {
        let w = n as f32 / total as f32;
        loss += l * n as f64;
        for (acc, t) in g.iter_mut().zip(&gi) {
            for (a, b) in acc.data_mut().iter_mut().zip(t.data()) {
                *a += w * b;
            }
        }
    }
    (loss / total as f64, g)
}

struct Stage<'a> {
    name: &'a str,
    epochs: usize,
    split: &'a str,
}

/// Generic loop: one call to `epoch` per epoch runs all steps and returns
/// `Ok(())`; `monitor` evaluates the tracked loss. The best parameters are
/// restored at the end.
fn run_stage(
    params: &mut NetworkParams,
    cfg: &TrainConfig,
    stage: Stage<'_>,
    log: &mut TrainLog,
    mut epoch: impl FnMut(&mut NetworkParams, &mut AdamState, usize) -> Result<(), TrainError>,
    monitor: impl Fn(&NetworkParams) -> Result<f64, TrainError>,
) -> Result<StageSummary, TrainError> {
    let mut state = AdamState::new(params.entries().iter().map(|e| &e.tensor), cfg.adam());
    let record = |epoch: usize, loss: f64, log: &mut TrainLog| {
        log.rows.push(LogRow {
            stage: stage.name.to_string(),
            epoch,
            split: stage.split.to_string(),
            loss,
            psnr: psnr_from_mse(loss, cfg.psnr_mode),
        });
    };
    let initial = monitor(params)?;
    if !initial.is_finite() {
        return Err(TrainError::NonFinite {
            stage: stage.name.to_string(),
            epoch: 0,
        });
    }
    record(0, initial, log);
    let (mut best, mut best_epoch, mut best_params) = (initial, 0, params.clone());
    let mut epochs_run = 0;
    for e in 1..=stage.epochs {
        state.config.lr = cfg.lr_at(e, stage.epochs);
        let outcome = epoch(params, &mut state, e).and_then(|_| monitor(params));
        let loss = match outcome {
            Ok(l) if l.is_finite() => l,
            Ok(_) | Err(TrainError::Adam(_)) => {
                warn!("{}: non-finite loss at epoch {e}, keeping epoch {best_epoch}", stage.name);
                return Err(TrainError::Diverged {
                    stage: stage.name.to_string(),
                    epoch: e,
                    checkpoint: Box::new(best_params),
                });
            }
            Err(other) => return Err(other),
        };
        epochs_run = e;
        record(e, loss, log);
        debug!("{} epoch {e}: loss {loss:.6}", stage.name);
        if loss < best {
            best = loss;
            best_epoch = e;
            best_params = params.clone();
        } else if e - best_epoch >= cfg.plateau_patience {
            info!("{}: plateau after epoch {e}, best epoch {best_epoch}", stage.name);
            break;
        }
    }
    *params = best_params;
    Ok(StageSummary {
        final_loss: best,
        best_epoch,
        epochs_run,
    })
}

fn apply_step(
    params: &mut NetworkParams,
    state: &mut AdamState,
    grads: &[Tensor],
) -> Result<(), TrainError> {
    let frozen = params.frozen_flags();
    adam_step(&mut params.tensors_mut(), grads, &frozen, state)?;
    Ok(())
}

struct PixelSet {
    rgb: Vec<f32>,
    target: Vec<f32>,
    cin: usize,
    cout: usize,
}

impl PixelSet {
    fn from_samples(samples: &[&Sample]) -> Self {
        let mut rgb = Vec::new();
        let mut target = Vec::new();
        for s in samples {
            rgb.extend(s.rgb.to_pixels());
            target.extend(s.hsi.to_pixels());
        }
        let cin = samples.first().map_or(3, |s| s.rgb.channels());
        let cout = samples.first().map_or(24, |s| s.hsi.channels());
        Self { rgb, target, cin, cout }
    }

    fn len(&self) -> usize {
        self.rgb.len() / self.cin
    }

    fn gather(&self, idx: &[usize]) -> (Vec<f32>, Vec<f32>) {
        let mut rgb = Vec::with_capacity(idx.len() * self.cin);
        let mut target = Vec::with_capacity(idx.len() * self.cout);
        for &i in idx {
            rgb.extend_from_slice(&self.rgb[i * self.cin..(i + 1) * self.cin]);
            target.extend_from_slice(&self.target[i * self.cout..(i + 1) * self.cout]);
        }
        (rgb, target)
    }

    fn loss_grad(&self, params: &NetworkParams, idx: &[usize]) -> Result<(f64, Vec<Tensor>), TrainError> {
        let parts = idx
            .par_chunks(SUB_BATCH)
            .map(|chunk| {
                let (rgb, target) = self.gather(chunk);
                let (l, g) = model1_loss_grad(params, &rgb, &target)?;
                Ok((l, g, chunk.len()))
            })
            .collect::<Result<Vec<_>, TrainError>>()?;
        Ok(reduce(parts))
    }

    fn loss(&self, params: &NetworkParams, idx: &[usize]) -> Result<f64, TrainError> {
        let parts: Vec<(f64, usize)> = idx
            .par_chunks(1024)
            .map(|chunk| {
                let (rgb, target) = self.gather(chunk);
                let pred = crate::models::model1_forward_pixels(params, &rgb)?;
                let sse: f64 = pred
                    .iter()
                    .zip(&target)
                    .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
                    .sum();
                Ok((sse, chunk.len() * self.cout))
            })
            .collect::<Result<_, TrainError>>()?;
        let (sse, n) = parts.iter().fold((0.0, 0), |(s, n), p| (s + p.0, n + p.1));
        Ok(sse / n as f64)
    }
}

fn subset(n: usize, cap: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match cap {
        Some(k) if k < n => {
            let mut v = sample(rng, n, k).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..n).collect(),
    }
}

fn check_samples(samples: &[&Sample], params: &NetworkParams) -> Result<(), TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let cfg = params.config();
    for s in samples {
        if s.rgb.channels() != cfg.spectral_in || s.hsi.channels() != cfg.spectral_out {
            return Err(TrainError::Config(format!(
                "stack {} has {}/{} channels, model maps {} -> {}",
                s.id,
                s.rgb.channels(),
                s.hsi.channels(),
                cfg.spectral_in,
                cfg.spectral_out
            )));
        }
    }
    Ok(())
}

/// Trains Model 1 on per-pixel (RGB, spectrum) pairs.
pub fn train_model1(samples: &[Sample], init: NetworkParams, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if init.arch() != ArchId::Model1 {
        return Err(TrainError::Arch {
            expected: ArchId::Model1,
            actual: init.arch(),
        });
    }
    let (train, val) = holdout(samples, cfg);
    check_samples(&train, &init)?;
    let pixels = PixelSet::from_samples(&train);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (monitor_set, monitor_idx, split) = if val.is_empty() {
        (None, subset(pixels.len(), cfg.monitor_pixels, &mut rng), "train")
    } else {
        let v = PixelSet::from_samples(&val);
        let idx = subset(v.len(), cfg.monitor_pixels, &mut rng);
        (Some(v), idx, "val")
    };
    let monitor_pixels = monitor_set.as_ref().unwrap_or(&pixels);
    info!(
        "model 1: {} training pixels from {} stacks, monitoring {} {split} pixels",
        pixels.len(),
        train.len(),
        monitor_idx.len()
    );
    let mut params = init;
    let mut log = TrainLog::default();
    let summary = run_stage(
        &mut params,
        cfg,
        Stage {
            name: "model1",
            epochs: cfg.max_epochs,
            split,
        },
        &mut log,
        |p, state, _| {
            let mut order = subset(pixels.len(), cfg.pixels_per_epoch, &mut rng);
            order.shuffle(&mut rng);
            for batch in order.chunks(cfg.batch_size) {
                let (_, grads) = pixels.loss_grad(p, batch)?;
                apply_step(p, state, &grads)?;
            }
            Ok(())
        },
        |p| monitor_pixels.loss(p, &monitor_idx),
    )?;
    Ok(TrainOutcome {
        params,
        log,
        final_loss: summary.final_loss,
        best_epoch: summary.best_epoch,
        epochs_run: summary.epochs_run,
    })
}

fn model2_loss(params: &NetworkParams, samples: &[&Sample]) -> Result<f64, TrainError> {
    let parts = samples
        .par_iter()
        .map(|s| {
            let pred = crate::models::model2_predict(params, &s.rgb, &s.density, &s.sparse)?;
            Ok(super::psnr::squared_error(&pred, &s.hsi)?)
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    let (sse, n) = parts.iter().fold((0.0, 0), |(s, n), p| (s + p.0, n + p.1));
    Ok(sse / n as f64)
}

fn random_crop(s: &Sample, crop: Option<(usize, usize)>, rng: &mut ChaCha8Rng) -> Result<Sample, TrainError> {
    let (w, h) = (s.hsi.width(), s.hsi.height());
    match crop {
        Some((cw, ch)) if cw < w || ch < h => {
            let (cw, ch) = (cw.min(w), ch.min(h));
            let t = Transform::Crop {
                x: rng.gen_range(0..=w - cw),
                y: rng.gen_range(0..=h - ch),
                width: cw,
                height: ch,
            };
            Ok(t.apply_sample(s)?)
        }
        _ => Ok(s.clone()),
    }
}

fn model2_epoch(
    params: &mut NetworkParams,
    state: &mut AdamState,
    train: &[&Sample],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    train_core: bool,
) -> Result<(), TrainError> {
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(rng);
    for batch in order.chunks(cfg.image_batch_size) {
        let crops = batch
            .iter()
            .map(|&i| random_crop(train[i], cfg.crop, rng))
            .collect::<Result<Vec<_>, _>>()?;
        let p: &NetworkParams = params;
        let parts = crops
            .par_iter()
            .map(|s| {
                let inputs = Model2Inputs {
                    rgb: &s.rgb,
                    d_hsi: &s.density,
                    sparse: &s.sparse,
                    target: &s.hsi,
                };
                let (l, g) = model2_loss_grad(p, inputs, train_core)?;
                Ok((l, g, s.hsi.data().len()))
            })
            .collect::<Result<Vec<_>, TrainError>>()?;
        let (_, grads) = reduce(parts);
        apply_step(params, state, &grads)?;
    }
    Ok(())
}

/// Two-stage Model 2 training from a trained Model 1: stage A updates only
/// the merge layers, stage B updates everything.
pub fn train_model2(samples: &[Sample], init: &NetworkParams, cfg: &TrainConfig) -> Result<Model2Outcome, TrainError> {
    cfg.validate()?;
    if init.arch() != ArchId::Model1 {
        return Err(TrainError::Arch {
            expected: ArchId::Model1,
            actual: init.arch(),
        });
    }
    let (train, val) = holdout(samples, cfg);
    check_samples(&train, init)?;
    let monitored: Vec<&Sample> = if val.is_empty() { train.clone() } else { val.clone() };
    let split = if val.is_empty() { "train" } else { "val" };
    let mut params = init_model2_from(init, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x2_57a6e);
    let mut log = TrainLog::default();

    params.set_frozen(MODEL1_PREFIX, true)?;
    let stage_a = run_stage(
        &mut params,
        cfg,
        Stage {
            name: "stage_a",
            epochs: cfg.stage_a_epochs.unwrap_or(cfg.max_epochs),
            split,
        },
        &mut log,
        |p, state, _| model2_epoch(p, state, &train, cfg, &mut rng, false),
        |p| model2_loss(p, &monitored),
    )?;
    for e in init.entries() {
        let now = params.entry(&e.name).expect("model 2 holds every model 1 entry");
        if now.tensor != e.tensor {
            return Err(TrainError::FrozenChanged(e.name.clone()));
        }
    }
    info!("stage A done: loss {:.6} at epoch {}", stage_a.final_loss, stage_a.best_epoch);

    params.set_frozen("", false)?;
    let stage_b = run_stage(
        &mut params,
        cfg,
        Stage {
            name: "stage_b",
            epochs: cfg.stage_b_epochs.unwrap_or(cfg.max_epochs),
            split,
        },
        &mut log,
        |p, state, _| model2_epoch(p, state, &train, cfg, &mut rng, true),
        |p| model2_loss(p, &monitored),
    )?;
    info!("stage B done: loss {:.6} at epoch {}", stage_b.final_loss, stage_b.best_epoch);
    Ok(Model2Outcome {
        params,
        log,
        stage_a,
        stage_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduce_weights_by_count() {
        let t = |v: f32| vec![Tensor::filled(&[2], v)];
        let (l, g) = reduce(vec![(1.0, t(1.0), 1), (4.0, t(4.0), 3)]);
        assert!((l - 3.25).abs() < 1e-12);
        assert_eq!(g[0].data(), &[3.25, 3.25]);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig { lr: 0.0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { validation_fraction: 1.0, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn log_csv_header() {
        let log = TrainLog {
            rows: vec![LogRow {
                stage: "model1".into(),
                epoch: 0,
                split: "train".into(),
                loss: 4.0,
                psnr: psnr_from_mse(4.0, PsnrMode::Paper),
            }],
        };
        assert!(log.to_csv_string().starts_with("stage,epoch,split,loss,psnr\nmodel1,0,train,4,"));
    }
}
