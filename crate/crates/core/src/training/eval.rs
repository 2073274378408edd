//! Evaluation reports, k-fold cross-validation and the transfer matrix.

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::psnr::{band_squared_error, inf_f64, psnr_from_mse, psnr_map, squared_error, vec_inf, MapSummary, PsnrMap};
use super::{train_model1, train_model2, EvalError, PsnrMode, TrainConfig, TrainError};
use crate::dataset::{split_folds, Sample, SpectralStack};
use crate::models::{build_model1, model1_predict, model2_predict, ArchConfig, ArchId, NetworkParams};

pub const DEFAULT_SATURATION: f32 = 250.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackScore {
    pub id: String,
    #[serde(with = "inf_f64")]
    pub psnr: f64,
    #[serde(with = "inf_f64")]
    pub psnr_standard: f64,
    pub map: MapSummary,
}

/// Scores of one set of predictions. `psnr` fields use the report's mode;
/// `*_standard` fields always use the conventional formula.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub psnr_mode: PsnrMode,
    pub saturation_threshold: f32,
    pub saturation_mask_applied: bool,
    pub per_stack: Vec<StackScore>,
    /// Band PSNR pooling all pixels of all stacks.
    #[serde(with = "vec_inf")]
    pub per_band_psnr: Vec<f64>,
    #[serde(with = "vec_inf")]
    pub per_band_psnr_standard: Vec<f64>,
    /// Mean of the per-stack entries.
    #[serde(with = "inf_f64")]
    pub mean_psnr: f64,
    #[serde(with = "inf_f64")]
    pub mean_psnr_standard: f64,
    #[serde(skip)]
    pub psnr_maps: Vec<PsnrMap>,
}

/// Scores `(id, prediction, ground truth)` triples.
pub fn evaluate(
    items: &[(String, SpectralStack, SpectralStack)],
    mode: PsnrMode,
    saturation_threshold: f32,
) -> Result<EvalReport, EvalError> {
    if items.is_empty() {
        return Err(EvalError::Empty);
    }
    let bands = items[0].2.channels();
    let mut band_sse = vec![0f64; bands];
    let mut band_n = 0usize;
    let mut per_stack = Vec::with_capacity(items.len());
    let mut maps = Vec::with_capacity(items.len());
    for (id, pred, gt) in items {
        if gt.channels() != bands {
            return Err(EvalError::Shape(format!("stack {id} has {} bands, expected {bands}", gt.channels())));
        }
        let (sse, n) = squared_error(pred, gt)?;
        for (acc, v) in band_sse.iter_mut().zip(band_squared_error(pred, gt)?) {
            *acc += v;
        }
        band_n += gt.pixel_count();
        let map = psnr_map(pred, gt, mode, saturation_threshold)?;
        per_stack.push(StackScore {
            id: id.clone(),
            psnr: psnr_from_mse(sse / n as f64, mode),
            psnr_standard: psnr_from_mse(sse / n as f64, PsnrMode::Standard),
            map: map.summary(),
        });
        maps.push(map);
    }
    let mean = |f: fn(&StackScore) -> f64| per_stack.iter().map(f).sum::<f64>() / per_stack.len() as f64;
    Ok(EvalReport {
        psnr_mode: mode,
        saturation_threshold,
        saturation_mask_applied: true,
        per_band_psnr: band_sse.iter().map(|s| psnr_from_mse(s / band_n as f64, mode)).collect(),
        per_band_psnr_standard: band_sse
            .iter()
            .map(|s| psnr_from_mse(s / band_n as f64, PsnrMode::Standard))
            .collect(),
        mean_psnr: mean(|s| s.psnr),
        mean_psnr_standard: mean(|s| s.psnr_standard),
        per_stack,
        psnr_maps: maps,
    })
}

/// Predictions of either model for every sample.
pub fn predict_samples(params: &NetworkParams, samples: &[Sample]) -> Result<Vec<(String, SpectralStack, SpectralStack)>, TrainError> {
    samples
        .iter()
        .map(|s| {
            let pred = match params.arch() {
                ArchId::Model1 => model1_predict(params, &s.rgb)?,
                ArchId::Model2 => model2_predict(params, &s.rgb, &s.density, &s.sparse)?,
            };
            Ok((s.id.clone(), pred, s.hsi.clone()))
        })
        .collect()
}

pub fn evaluate_params(params: &NetworkParams, samples: &[Sample], mode: PsnrMode, saturation: f32) -> Result<EvalReport, TrainError> {
    Ok(evaluate(&predict_samples(params, samples)?, mode, saturation)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvConfig {
    pub k: usize,
    pub seed: u64,
    /// Also train and score Model 2 on every fold.
    pub model2: bool,
    pub saturation_threshold: f32,
    /// Seed of the Model 1 initialization.
    pub init_seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            k: 5,
            seed: 0,
            model2: true,
            saturation_threshold: DEFAULT_SATURATION,
            init_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub model1: Option<EvalReport>,
    pub model2: Option<EvalReport>,
    pub error: Option<String>,
}

/// Equal-weight aggregate over successful folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    #[serde(with = "inf_f64")]
    pub mean_psnr: f64,
    #[serde(with = "vec_inf")]
    pub per_band_psnr: Vec<f64>,
    pub folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    pub folds: Vec<FoldReport>,
    pub model1: Option<Aggregate>,
    pub model2: Option<Aggregate>,
}

fn aggregate<'a>(reports: impl Iterator<Item = &'a EvalReport>) -> Option<Aggregate> {
    let reports: Vec<&EvalReport> = reports.collect();
    let first = reports.first()?;
    let n = reports.len() as f64;
    let bands = first.per_band_psnr.len();
    Some(Aggregate {
        mean_psnr: reports.iter().map(|r| r.mean_psnr).sum::<f64>() / n,
        per_band_psnr: (0..bands)
            .map(|b| reports.iter().map(|r| r.per_band_psnr[b]).sum::<f64>() / n)
            .collect(),
        folds: reports.len(),
    })
}

fn subset(samples: &[Sample], ids: &[usize]) -> Vec<Sample> {
    ids.iter().map(|&i| samples[i].clone()).collect()
}

fn run_fold(
    samples: &[Sample],
    train: &[usize],
    test: &[usize],
    arch: &ArchConfig,
    train_cfg: &TrainConfig,
    cv: &CvConfig,
) -> Result<(EvalReport, Option<EvalReport>), TrainError> {
    let train_set = subset(samples, train);
    let test_set = subset(samples, test);
    let m1 = train_model1(&train_set, build_model1(arch, cv.init_seed)?, train_cfg)?;
    let r1 = evaluate_params(&m1.params, &test_set, train_cfg.psnr_mode, cv.saturation_threshold)?;
    let r2 = if cv.model2 {
        let m2 = train_model2(&train_set, &m1.params, train_cfg)?;
        Some(evaluate_params(&m2.params, &test_set, train_cfg.psnr_mode, cv.saturation_threshold)?)
    } else {
        None
    };
    Ok((r1, r2))
}

/// k-fold cross-validation. Failed folds are reported and left out of the
/// aggregates.
pub fn run_loocv(samples: &[Sample], arch: &ArchConfig, train_cfg: &TrainConfig, cv: &CvConfig) -> Result<CvReport, TrainError> {
    train_cfg.validate()?;
    if cv.k < 2 {
        return Err(TrainError::Config(format!("k-fold needs k >= 2, got {}", cv.k)));
    }
    if samples.len() < cv.k {
        return Err(TrainError::Config(format!("{} stacks cannot fill {} folds", samples.len(), cv.k)));
    }
    let idx: Vec<usize> = (0..samples.len()).collect();
    let folds = split_folds(&idx, cv.k, cv.seed).map_err(|e| TrainError::Config(e.to_string()))?;
    let reports: Vec<FoldReport> = folds
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let ids = |v: &[usize]| v.iter().map(|&j| samples[j].id.clone()).collect::<Vec<_>>();
            let (model1, model2, error) = match run_fold(samples, &f.train, &f.test, arch, train_cfg, cv) {
                Ok((a, b)) => {
                    info!("fold {i}: model 1 {:.3} dB{}", a.mean_psnr, b.as_ref().map_or(String::new(), |r| format!(", model 2 {:.3} dB", r.mean_psnr)));
                    (Some(a), b, None)
                }
                Err(e) => {
                    warn!("fold {i} failed: {e}");
                    (None, None, Some(e.to_string()))
                }
            };
            FoldReport {
                fold: i,
                train_ids: ids(&f.train),
                test_ids: ids(&f.test),
                model1,
                model2,
                error,
            }
        })
        .collect();
    Ok(CvReport {
        k: cv.k,
        model1: aggregate(reports.iter().filter_map(|f| f.model1.as_ref())),
        model2: aggregate(reports.iter().filter_map(|f| f.model2.as_ref())),
        folds: reports,
    })
}

/// PSNR of models trained on each source (rows) and tested on each target
/// (columns). Diagonal cells come from k-fold runs within the source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferTable {
    pub sources: Vec<String>,
    pub model1: Vec<Vec<Option<f64>>>,
    pub model2: Vec<Vec<Option<f64>>>,
}

pub fn transfer_matrix(
    named: &[(String, Vec<Sample>)],
    arch: &ArchConfig,
    train_cfg: &TrainConfig,
    cv: &CvConfig,
) -> Result<TransferTable, TrainError> {
    if named.len() < 2 {
        return Err(TrainError::Config("transfer matrix needs at least two sources".into()));
    }
    let n = named.len();
    let mut m1 = vec![vec![None; n]; n];
    let mut m2 = vec![vec![None; n]; n];
    for (r, (name, source)) in named.iter().enumerate() {
        if source.is_empty() {
            warn!("source {name} is empty, skipping its row");
            continue;
        }
        let diag = run_loocv(source, arch, train_cfg, cv)?;
        m1[r][r] = diag.model1.map(|a| a.mean_psnr);
        m2[r][r] = diag.model2.map(|a| a.mean_psnr);
        let p1 = train_model1(source, build_model1(arch, cv.init_seed)?, train_cfg)?.params;
        let p2 = if cv.model2 {
            Some(train_model2(source, &p1, train_cfg)?.params)
        } else {
            None
        };
        for (c, (_, target)) in named.iter().enumerate() {
            if c == r || target.is_empty() {
                continue;
            }
            m1[r][c] = Some(evaluate_params(&p1, target, train_cfg.psnr_mode, cv.saturation_threshold)?.mean_psnr);
            if let Some(p2) = &p2 {
                m2[r][c] = Some(evaluate_params(p2, target, train_cfg.psnr_mode, cv.saturation_threshold)?.mean_psnr);
            }
        }
    }
    Ok(TransferTable {
        sources: named.iter().map(|(n, _)| n.clone()).collect(),
        model1: m1,
        model2: m2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::default_wavelengths;

    #[test]
    fn report_mean_is_mean_of_stacks() {
        let gt = SpectralStack::new(2, 1, default_wavelengths(), vec![100.0; 48]).unwrap();
        let p1 = SpectralStack::new(2, 1, default_wavelengths(), vec![101.0; 48]).unwrap();
        let p2 = SpectralStack::new(2, 1, default_wavelengths(), vec![110.0; 48]).unwrap();
        let r = evaluate(
            &[("a".into(), p1, gt.clone()), ("b".into(), p2, gt)],
            PsnrMode::Standard,
            DEFAULT_SATURATION,
        )
        .unwrap();
        let want = (r.per_stack[0].psnr + r.per_stack[1].psnr) / 2.0;
        assert!((r.mean_psnr - want).abs() < 1e-12);
        assert_eq!(r.per_band_psnr.len(), 24);
        // pooled band MSE is (1 + 100) / 2
        assert!((r.per_band_psnr[0] - psnr_from_mse(50.5, PsnrMode::Standard)).abs() < 1e-12);
    }
}
