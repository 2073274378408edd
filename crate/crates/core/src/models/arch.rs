use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ModelError;
use crate::dataset::default_wavelengths;
use crate::tensorcore::{LayerKind, LayerSpec};

/// Number of transposed-convolution layers in the spectral upscaling stage.
pub const UPSCALE_LAYERS: usize = 4;

/// Which density map multiplies the recovered stack in the merge stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeDensity {
    /// The hyperspectral sampling map `D_hsi`.
    Hsi,
    /// Its complement `D_rgb = 1 - D_hsi`.
    Rgb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchId {
    Model1,
    Model2,
}

/// Layer layout shared by both models.
///
/// The spectral axis of each pixel is treated as a 1-channel sequence of
/// length `spectral_in`; the upscale stage lengthens it to `spectral_out`
/// and the HFE block adds a residual correction at full length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub spectral_in: usize,
    pub spectral_out: usize,
    pub hidden_features: usize,
    pub upscale_layers: Vec<LayerSpec>,
    pub hfe_layers: Vec<LayerSpec>,
    /// Spatial kernel of the merge convolution (odd).
    pub merge_kernel: usize,
    pub merge_density: MergeDensity,
    /// Band grid of the predicted stack.
    pub wavelengths_nm: Vec<f64>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self::for_bands(3, default_wavelengths(), 32).expect("default layout is valid")
    }
}

impl ArchConfig {
    /// Layout for `spectral_in -> wavelengths.len()` upscaling.
    ///
    /// The output length must be `spectral_in * 2^d` with `d <= 4`: the
    /// first `d` layers double the length (kernel 4, stride 2, crop 1) and the
    /// rest keep it (kernel 3, stride 1, pad 1).
    pub fn for_bands(spectral_in: usize, wavelengths_nm: Vec<f64>, hidden: usize) -> Result<Self, ModelError> {
        let spectral_out = wavelengths_nm.len();
        if spectral_in == 0 || spectral_out % spectral_in != 0 {
            return Err(ModelError::Config(format!(
                "cannot upscale {spectral_in} bands to {spectral_out} with stride-2 layers"
            )));
        }
        let ratio = spectral_out / spectral_in;
        if !ratio.is_power_of_two() || ratio.trailing_zeros() as usize > UPSCALE_LAYERS {
            return Err(ModelError::Config(format!(
                "{spectral_in} -> {spectral_out} needs a power-of-two ratio of at most 2^{UPSCALE_LAYERS}"
            )));
        }
        let doublings = ratio.trailing_zeros() as usize;
        let upscale_layers = (0..UPSCALE_LAYERS)
            .map(|i| {
                let cin = if i == 0 { 1 } else { hidden };
                let cout = if i == UPSCALE_LAYERS - 1 { 1 } else { hidden };
                if i < doublings {
                    LayerSpec::tconv1d(cin, cout, 4, 2, 1)
                } else {
                    LayerSpec::tconv1d(cin, cout, 3, 1, 1)
                }
            })
            .collect();
        let hfe_layers = vec![
            LayerSpec::conv1d(1, hidden, 3, 1, 1),
            LayerSpec::conv1d(hidden, 1, 3, 1, 1),
        ];
        let cfg = Self {
            spectral_in,
            spectral_out,
            hidden_features: hidden,
            upscale_layers,
            hfe_layers,
            merge_kernel: 5,
            merge_density: MergeDensity::Hsi,
            wavelengths_nm,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sequence lengths through the upscale stage, input first.
    pub fn upscale_lengths(&self) -> Result<Vec<usize>, ModelError> {
        let mut lens = vec![self.spectral_in];
        for l in &self.upscale_layers {
            let last = *lens.last().expect("nonempty");
            lens.push(l.output_length(last)?);
        }
        Ok(lens)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.upscale_layers.len() != UPSCALE_LAYERS {
            return bad(format!(
                "upscale stage needs exactly {UPSCALE_LAYERS} transposed convolutions, got {}",
                self.upscale_layers.len()
            ));
        }
        if self.upscale_layers.iter().any(|l| l.kind != LayerKind::Tconv1d) {
            return bad("upscale stage accepts only tconv1d layers".into());
        }
        if self.hfe_layers.is_empty() || self.hfe_layers.iter().any(|l| l.kind != LayerKind::Conv1d) {
            return bad("HFE block needs one or more conv1d layers".into());
        }
        for stage in [&self.upscale_layers, &self.hfe_layers] {
            let mut ch = 1;
            for (i, l) in stage.iter().enumerate() {
                l.validate()?;
                if l.in_channels != ch {
                    return bad(format!("layer {i} expects {} channels, receives {ch}", l.in_channels));
                }
                ch = l.out_channels;
            }
            if ch != 1 {
                return bad(format!("stage must end with 1 channel, ends with {ch}"));
            }
        }
        let lens = self.upscale_lengths()?;
        if *lens.last().expect("nonempty") != self.spectral_out {
            return bad(format!(
                "upscale stage maps {} -> {:?}, expected final length {}",
                self.spectral_in, lens, self.spectral_out
            ));
        }
        for l in &self.hfe_layers {
            if l.output_length(self.spectral_out)? != self.spectral_out {
                return bad("HFE layers must preserve the spectral length".into());
            }
        }
        if self.wavelengths_nm.len() != self.spectral_out {
            return bad(format!(
                "{} output wavelengths listed for {} bands",
                self.wavelengths_nm.len(),
                self.spectral_out
            ));
        }
        crate::dataset::SpectralStack::zeros(1, 1, self.wavelengths_nm.clone())
            .map_err(|e| ModelError::Config(e.to_string()))?;
        if self.merge_kernel == 0 || self.merge_kernel % 2 == 0 {
            return bad(format!("merge kernel must be odd, got {}", self.merge_kernel));
        }
        Ok(())
    }

    pub fn merge_layer(&self) -> LayerSpec {
        LayerSpec::conv2d(2 * self.spectral_out, self.spectral_out, self.merge_kernel, 1, self.merge_kernel / 2)
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
