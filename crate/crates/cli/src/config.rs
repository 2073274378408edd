use std::path::{Path, PathBuf};

use endospec::dataset::SyntheticConfig;
use endospec::geometry::{CornerDetector, FlowConfig, PipelineConfig, SceneConfig};
use endospec::overlay::{Sao2Config, NBI_DEFAULT_NM};
use endospec::training::{CvConfig, PsnrMode, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// One file drives every command; each reads its own section.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub gen: GenSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub reconstruct: ReconstructSection,
    #[serde(default)]
    pub overlay: OverlaySection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSection {
    pub out_dir: Option<PathBuf>,
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    pub synthetic: SyntheticConfig,
    pub scene: SceneConfig,
}

impl Default for GenSection {
    fn default() -> Self {
        Self {
            out_dir: None,
            count: 10,
            width: 32,
            height: 32,
            seed: 0,
            synthetic: SyntheticConfig::default(),
            scene: SceneConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub dataset_dir: Option<PathBuf>,
    pub out_params: Option<PathBuf>,
    pub log_csv: Option<PathBuf>,
    pub summary_json: Option<PathBuf>,
    pub model: u8,
    pub init_model1: Option<PathBuf>,
    pub hidden_features: usize,
    pub init_seed: u64,
    pub config: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            dataset_dir: None,
            out_params: None,
            log_csv: None,
            summary_json: None,
            model: 1,
            init_model1: None,
            hidden_features: 32,
            init_seed: 0,
            config: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedSource {
    pub name: String,
    pub dataset_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub dataset_dir: Option<PathBuf>,
    pub params: Option<PathBuf>,
    pub report_json: Option<PathBuf>,
    pub predictions_dir: Option<PathBuf>,
    pub psnr_mode: PsnrMode,
    pub saturation_threshold: f32,
    pub loocv: bool,
    pub transfer: bool,
    pub sources: Vec<NamedSource>,
    pub hidden_features: usize,
    pub train: TrainConfig,
    pub cv: CvConfig,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            dataset_dir: None,
            params: None,
            report_json: None,
            predictions_dir: None,
            psnr_mode: PsnrMode::Paper,
            saturation_threshold: endospec::training::DEFAULT_SATURATION,
            loocv: false,
            transfer: false,
            sources: Vec::new(),
            hidden_features: 32,
            train: TrainConfig::default(),
            cv: CvConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructSection {
    pub camera: Option<PathBuf>,
    /// Default rig geometry when absent.
    pub rig: Option<PathBuf>,
    pub sl_a: Option<PathBuf>,
    /// Second SL frame; the first is reused when absent.
    pub sl_b: Option<PathBuf>,
    pub correspondences: Option<PathBuf>,
    /// Two white-light stack files tracked with the built-in detector.
    pub frames: Option<[PathBuf; 2]>,
    pub frame_gap: usize,
    pub sl_only: bool,
    pub pipeline: PipelineConfig,
    pub detector: CornerDetector,
    pub flow: FlowConfig,
    pub out_ply: Option<PathBuf>,
    pub metrics_json: Option<PathBuf>,
}

impl Default for ReconstructSection {
    fn default() -> Self {
        Self {
            camera: None,
            rig: None,
            sl_a: None,
            sl_b: None,
            correspondences: None,
            frames: None,
            frame_gap: 1,
            sl_only: false,
            pipeline: PipelineConfig::default(),
            detector: CornerDetector::default(),
            flow: FlowConfig::default(),
            out_ply: None,
            metrics_json: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OverlaySection {
    pub cloud_ply: Option<PathBuf>,
    pub msi: Option<PathBuf>,
    pub camera: Option<PathBuf>,
    pub out_ply: Option<PathBuf>,
    pub summary_json: Option<PathBuf>,
    pub nbi_nm: Vec<f64>,
    pub extinction_csv: Option<PathBuf>,
    pub sao2: Sao2Config,
}

impl Default for OverlaySection {
    fn default() -> Self {
        Self {
            cloud_ply: None,
            msi: None,
            camera: None,
            out_ply: None,
            summary_json: None,
            nbi_nm: NBI_DEFAULT_NM.to_vec(),
            extinction_csv: None,
            sao2: Sao2Config::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn defaults() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            ..Default::default()
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(v) = p {
                if v.is_relative() {
                    *v = base.join(&*v);
                }
            }
        };
        fix(&mut self.gen.out_dir);
        let t = &mut self.train;
        for p in [&mut t.dataset_dir, &mut t.out_params, &mut t.log_csv, &mut t.summary_json, &mut t.init_model1] {
            fix(p);
        }
        let e = &mut self.eval;
        for p in [&mut e.dataset_dir, &mut e.params, &mut e.report_json, &mut e.predictions_dir] {
            fix(p);
        }
        for s in &mut e.sources {
            let mut d = Some(s.dataset_dir.clone());
            fix(&mut d);
            s.dataset_dir = d.expect("set above");
        }
        let r = &mut self.reconstruct;
        for p in [
            &mut r.camera,
            &mut r.rig,
            &mut r.sl_a,
            &mut r.sl_b,
            &mut r.correspondences,
            &mut r.out_ply,
            &mut r.metrics_json,
        ] {
            fix(p);
        }
        if let Some(frames) = &mut r.frames {
            for f in frames.iter_mut() {
                let mut d = Some(f.clone());
                fix(&mut d);
                *f = d.expect("set above");
            }
        }
        let o = &mut self.overlay;
        for p in [&mut o.cloud_ply, &mut o.msi, &mut o.camera, &mut o.out_ply, &mut o.summary_json, &mut o.extinction_csv] {
            fix(p);
        }
    }
}

/// A required path, or a config error naming the missing key.
pub fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    p.as_deref().ok_or_else(|| CliError::Config(format!("missing required setting `{key}`")))
}

pub fn log_resolved<T: Serialize>(section: &str, value: &T) {
    match serde_json::to_string(value) {
        Ok(json) => log::info!("resolved {section} config: {json}"),
        Err(e) => log::warn!("could not render {section} config: {e}"),
    }
}
