//! Named parameter tensors, freezing, and the on-disk parameter format: a
//! JSON manifest plus a sibling payload of contiguous little-endian `f32`
//! values in manifest order.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ArchConfig, ArchId, ModelError};
use crate::tensorcore::{LayerParams, LayerSpec, Tensor};

pub const MODEL1_PREFIX: &str = "model1core/";
pub const MERGE_PREFIX: &str = "merge/";
pub const PARAMS_FORMAT: &str = "endospec-params";
pub const PARAMS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    pub frozen: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    arch: ArchId,
    config: ArchConfig,
    config_digest: String,
    entries: Vec<ParamEntry>,
}

/// `(name, layer)` pairs in parameter order for an architecture.
pub fn layer_names(arch: ArchId, cfg: &ArchConfig) -> Vec<(String, LayerSpec)> {
    let mut out: Vec<(String, LayerSpec)> = cfg
        .upscale_layers
        .iter()
        .enumerate()
        .map(|(i, l)| (format!("{MODEL1_PREFIX}up{i}"), *l))
        .chain(
            cfg.hfe_layers
                .iter()
                .enumerate()
                .map(|(i, l)| (format!("{MODEL1_PREFIX}hfe{i}"), *l)),
        )
        .collect();
    if arch == ArchId::Model2 {
        out.push((format!("{MERGE_PREFIX}conv"), cfg.merge_layer()));
    }
    out
}

fn expected_shapes(arch: ArchId, cfg: &ArchConfig) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    for (name, layer) in layer_names(arch, cfg) {
        if let Some(ws) = layer.weight_shape() {
            out.push((format!("{name}.weight"), ws));
        }
        if let Some(bs) = layer.bias_shape() {
            out.push((format!("{name}.bias"), bs));
        }
    }
    out
}

fn he_init(layer: &LayerSpec, rng: &mut ChaCha8Rng) -> Tensor {
    let shape = layer.weight_shape().expect("conv layer");
    let std = (2.0 / layer.fan_in() as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| normal.sample(rng) as f32).collect();
    Tensor::new(shape, data).expect("shape matches")
}

fn init_entries(arch: ArchId, cfg: &ArchConfig, seed: u64) -> Vec<ParamEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    for (name, layer) in layer_names(arch, cfg) {
        let is_merge = name.starts_with(MERGE_PREFIX);
        // merge starts at zero so a fresh model 2 reproduces its model 1 core
        let weight = if is_merge {
            Tensor::zeros(&layer.weight_shape().expect("conv"))
        } else {
            he_init(&layer, &mut rng)
        };
        entries.push(ParamEntry {
            name: format!("{name}.weight"),
            tensor: weight,
            frozen: false,
        });
        if let Some(bs) = layer.bias_shape() {
            entries.push(ParamEntry {
                name: format!("{name}.bias"),
                tensor: Tensor::zeros(&bs),
                frozen: false,
            });
        }
    }
    entries
}

/// Fresh Model 1 parameters: He-scaled normal weights, zero biases.
pub fn build_model1(cfg: &ArchConfig, seed: u64) -> Result<NetworkParams, ModelError> {
    cfg.validate()?;
    Ok(NetworkParams {
        arch: ArchId::Model1,
        config: cfg.clone(),
        config_digest: cfg.digest(),
        entries: init_entries(ArchId::Model1, cfg, seed),
    })
}

/// Fresh Model 2 parameters (core randomly initialized, merge zeroed).
pub fn build_model2(cfg: &ArchConfig, seed: u64) -> Result<NetworkParams, ModelError> {
    cfg.validate()?;
    Ok(NetworkParams {
        arch: ArchId::Model2,
        config: cfg.clone(),
        config_digest: cfg.digest(),
        entries: init_entries(ArchId::Model2, cfg, seed),
    })
}

/// Model 2 whose shared layers are copied from a trained Model 1 and whose
/// merge stage is freshly initialized.
pub fn init_model2_from(model1: &NetworkParams, seed: u64) -> Result<NetworkParams, ModelError> {
    if model1.arch != ArchId::Model1 {
        return Err(ModelError::ArchMismatch {
            expected: ArchId::Model1,
            actual: model1.arch,
        });
    }
    let mut m2 = build_model2(&model1.config, seed)?;
    for e in &mut m2.entries {
        if let Some(src) = model1.entry(&e.name) {
            e.tensor = src.tensor.clone();
        }
    }
    Ok(m2)
}

impl NetworkParams {
    pub fn arch(&self) -> ArchId {
        self.arch
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    pub fn config_digest(&self) -> &str {
        &self.config_digest
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|e| e.name == name).map(|e| &mut e.tensor)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn parameter_count(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    /// Weight/bias of layer `name` (without the `.weight` suffix).
    pub fn layer_params(&self, name: &str) -> LayerParams {
        LayerParams {
            weight: self.entry(&format!("{name}.weight")).map(|e| e.tensor.clone()),
            bias: self.entry(&format!("{name}.bias")).map(|e| e.tensor.clone()),
        }
    }

    pub fn frozen_flags(&self) -> Vec<bool> {
        self.entries.iter().map(|e| e.frozen).collect()
    }

    pub fn all_frozen_with_prefix(&self, prefix: &str) -> bool {
        self.entries
            .iter()
            .filter(|e| e.name.starts_with(prefix))
            .all(|e| e.frozen)
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.entries.iter_mut().map(|e| &mut e.tensor).collect()
    }

    /// Sets the frozen flag on every entry whose name starts with `prefix`
    /// (empty prefix matches all). Returns the number of entries touched.
    pub fn set_frozen(&mut self, prefix: &str, frozen: bool) -> Result<usize, ModelError> {
        let mut n = 0;
        for e in self.entries.iter_mut().filter(|e| e.name.starts_with(prefix)) {
            e.frozen = frozen;
            n += 1;
        }
        if n == 0 {
            let mut valid: Vec<String> = self
                .entries
                .iter()
                .map(|e| match e.name.find('/') {
                    Some(i) => e.name[..=i].to_string(),
                    None => e.name.clone(),
                })
                .collect();
            valid.dedup();
            return Err(ModelError::NoSuchPrefix {
                prefix: prefix.to_string(),
                valid,
            });
        }
        Ok(n)
    }

    /// Drops the merge stage of a Model 2, keeping the shared core.
    pub fn to_model1(&self) -> NetworkParams {
        NetworkParams {
            arch: ArchId::Model1,
            config: self.config.clone(),
            config_digest: self.config_digest.clone(),
            entries: self
                .entries
                .iter()
                .filter(|e| e.name.starts_with(MODEL1_PREFIX))
                .cloned()
                .collect(),
        }
    }

    fn check_layout(&self) -> Result<(), ModelError> {
        let expected = expected_shapes(self.arch, &self.config);
        if expected.len() != self.entries.len() {
            return Err(ModelError::Layout(format!(
                "{} entries for an architecture with {}",
                self.entries.len(),
                expected.len()
            )));
        }
        for ((name, shape), e) in expected.iter().zip(&self.entries) {
            if *name != e.name || shape.as_slice() != e.tensor.shape() {
                return Err(ModelError::Layout(format!(
                    "entry {} {:?} where {} {:?} was expected",
                    e.name,
                    e.tensor.shape(),
                    name,
                    shape
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestTensor {
    name: String,
    shape: Vec<usize>,
    frozen: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsManifest {
    format: String,
    version: u32,
    arch_id: ArchId,
    config: ArchConfig,
    config_digest: String,
    payload: String,
    payload_bytes: usize,
    entries: Vec<ManifestTensor>,
}

pub fn params_payload_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("f32")
}

pub fn save_params(params: &NetworkParams, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let path = path.as_ref();
    let payload = params_payload_path(path);
    let mut bytes = Vec::with_capacity(params.parameter_count() * 4);
    for e in &params.entries {
        for v in e.tensor.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = ParamsManifest {
        format: PARAMS_FORMAT.into(),
        version: PARAMS_VERSION,
        arch_id: params.arch,
        config: params.config.clone(),
        config_digest: params.config_digest.clone(),
        payload: payload
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default(),
        payload_bytes: bytes.len(),
        entries: params
            .entries
            .iter()
            .map(|e| ManifestTensor {
                name: e.name.clone(),
                shape: e.tensor.shape().to_vec(),
                frozen: e.frozen,
            })
            .collect(),
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    fs::write(path, json).map_err(|e| ModelError::io(path, e))?;
    fs::write(&payload, bytes).map_err(|e| ModelError::io(&payload, e))
}

/// Loads parameters, verifying the stored digest against the stored config
/// and the payload size against the manifest.
pub fn load_params(path: impl AsRef<Path>) -> Result<NetworkParams, ModelError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| ModelError::io(path, e))?;
    let m: ParamsManifest = serde_json::from_str(&text)?;
    if m.format != PARAMS_FORMAT || m.version != PARAMS_VERSION {
        return Err(ModelError::Layout(format!(
            "unsupported parameter file {} v{}",
            m.format, m.version
        )));
    }
    m.config.validate()?;
    let digest = m.config.digest();
    if digest != m.config_digest {
        return Err(ModelError::DigestMismatch {
            expected: m.config_digest,
            actual: digest,
        });
    }
    let payload = path.with_file_name(&m.payload);
    let bytes = fs::read(&payload).map_err(|e| ModelError::io(&payload, e))?;
    let needed: usize = m.entries.iter().map(|e| e.shape.iter().product::<usize>()).sum::<usize>() * 4;
    if bytes.len() != m.payload_bytes || bytes.len() != needed {
        return Err(ModelError::Truncated {
            expected: needed,
            actual: bytes.len(),
        });
    }
    let mut offset = 0;
    let mut entries = Vec::with_capacity(m.entries.len());
    for e in m.entries {
        let n: usize = e.shape.iter().product();
        let data = bytes[offset..offset + 4 * n]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        offset += 4 * n;
        entries.push(ParamEntry {
            name: e.name,
            tensor: Tensor::new(e.shape, data)?,
            frozen: e.frozen,
        });
    }
    let params = NetworkParams {
        arch: m.arch_id,
        config: m.config,
        config_digest: m.config_digest,
        entries,
    };
    params.check_layout()?;
    Ok(params)
}

/// [`load_params`] that also refuses files built for a different layout.
pub fn load_params_checked(path: impl AsRef<Path>, expected: &ArchConfig) -> Result<NetworkParams, ModelError> {
    let p = load_params(path)?;
    let want = expected.digest();
    if p.config_digest != want {
        return Err(ModelError::DigestMismatch {
            expected: want,
            actual: p.config_digest,
        });
    }
    Ok(p)
}
