//! Forward and backward passes of both models.
//!
//! Model 1 is a per-pixel function: each RGB triple is a length-3 sequence
//! with one channel, pushed through the tconv upscale stage and the HFE
//! residual block. Values are scaled by 1/255 on the way in and by 255 on
//! the way out, so losses and predictions live on the [0, 255] scale.

use rayon::prelude::*;

use super::{ArchId, MergeDensity, ModelError, NetworkParams, MERGE_PREFIX, MODEL1_PREFIX};
use crate::dataset::{DensityMap, SpectralStack};
use crate::tensorcore::{backward, forward, l2_loss, Cache, LayerSpec, Tensor};

const SCALE: f32 = 255.0;
const PREDICT_CHUNK: usize = 2048;

type StageTrace = Vec<(Cache, Option<Cache>)>;

/// Layer caches recorded by [`core_forward`].
#[derive(Debug, Clone)]
pub struct CoreTrace {
    up: StageTrace,
    hfe: StageTrace,
}

fn stage_names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{MODEL1_PREFIX}{prefix}{i}")).collect()
}

/// Conv layers with a ReLU after every layer but the last.
fn run_stage(
    params: &NetworkParams,
    names: &[String],
    layers: &[LayerSpec],
    x: &Tensor,
) -> Result<(Tensor, StageTrace), ModelError> {
    let relu = LayerSpec::relu();
    let mut h = x.clone();
    let mut trace = Vec::with_capacity(layers.len());
    for (i, (name, layer)) in names.iter().zip(layers).enumerate() {
        let (y, c) = forward(layer, &[&h], &params.layer_params(name))?;
        if i + 1 < layers.len() {
            let (r, rc) = forward(&relu, &[&y], &Default::default())?;
            h = r;
            trace.push((c, Some(rc)));
        } else {
            h = y;
            trace.push((c, None));
        }
    }
    Ok((h, trace))
}

fn add_into(acc: &mut Tensor, g: &Tensor) {
    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
        *a += b;
    }
}

fn accumulate(params: &NetworkParams, name: &str, gw: Option<Tensor>, gb: Option<Tensor>, grads: &mut [Tensor]) {
    if let (Some(g), Some(i)) = (gw, params.index_of(&format!("{name}.weight"))) {
        add_into(&mut grads[i], &g);
    }
    if let (Some(g), Some(i)) = (gb, params.index_of(&format!("{name}.bias"))) {
        add_into(&mut grads[i], &g);
    }
}

fn back_stage(
    params: &NetworkParams,
    names: &[String],
    layers: &[LayerSpec],
    trace: &StageTrace,
    grad: Tensor,
    grads: &mut [Tensor],
) -> Result<Tensor, ModelError> {
    let relu = LayerSpec::relu();
    let mut g = grad;
    for ((name, layer), (c, rc)) in names.iter().zip(layers).zip(trace).rev() {
        if let Some(rc) = rc {
            g = backward(&relu, &g, rc)?.0.remove(0);
        }
        let (mut gi, lp) = backward(layer, &g, c)?;
        accumulate(params, name, lp.weight, lp.bias, grads);
        g = gi.remove(0);
    }
    Ok(g)
}

/// Shared core on normalized input `[N, 1, spectral_in]`, returning
/// normalized output `[N, 1, spectral_out]`.
pub fn core_forward(params: &NetworkParams, x: &Tensor) -> Result<(Tensor, CoreTrace), ModelError> {
    let cfg = params.config();
    let up_names = stage_names("up", cfg.upscale_layers.len());
    let hfe_names = stage_names("hfe", cfg.hfe_layers.len());
    let (u, up) = run_stage(params, &up_names, &cfg.upscale_layers, x)?;
    let (h, hfe) = run_stage(params, &hfe_names, &cfg.hfe_layers, &u)?;
    let (out, _) = forward(&LayerSpec::residual_add(), &[&u, &h], &Default::default())?;
    Ok((out, CoreTrace { up, hfe }))
}

/// Accumulates core parameter gradients into `grads` (aligned with
/// `params.entries()`) and returns the gradient with respect to the input.
pub(crate) fn core_backward(
    params: &NetworkParams,
    trace: &CoreTrace,
    grad_out: &Tensor,
    grads: &mut [Tensor],
) -> Result<Tensor, ModelError> {
    let cfg = params.config();
    let up_names = stage_names("up", cfg.upscale_layers.len());
    let hfe_names = stage_names("hfe", cfg.hfe_layers.len());
    let mut gu = back_stage(params, &hfe_names, &cfg.hfe_layers, &trace.hfe, grad_out.clone(), grads)?;
    add_into(&mut gu, grad_out);
    back_stage(params, &up_names, &cfg.upscale_layers, &trace.up, gu, grads)
}

pub(crate) fn zero_grads(params: &NetworkParams) -> Vec<Tensor> {
    params.entries().iter().map(|e| Tensor::zeros(e.tensor.shape())).collect()
}

fn check_arch(params: &NetworkParams, arch: ArchId) -> Result<(), ModelError> {
    if params.arch() != arch {
        return Err(ModelError::ArchMismatch {
            expected: arch,
            actual: params.arch(),
        });
    }
    Ok(())
}

fn pixel_input(params: &NetworkParams, rgb_pixels: &[f32]) -> Result<Tensor, ModelError> {
    let cin = params.config().spectral_in;
    if rgb_pixels.len() % cin != 0 {
        return Err(ModelError::Channels {
            expected: cin,
            actual: rgb_pixels.len() % cin,
        });
    }
    let data = rgb_pixels.iter().map(|v| v / SCALE).collect();
    Ok(Tensor::new(vec![rgb_pixels.len() / cin, 1, cin], data)?)
}

/// Normalized core output for pixel-major RGB values, evaluated in
/// parallel chunks.
fn core_pixels_normalized(params: &NetworkParams, rgb_pixels: &[f32]) -> Result<Vec<f32>, ModelError> {
    let cin = params.config().spectral_in;
    let chunks: Vec<Vec<f32>> = rgb_pixels
        .par_chunks(PREDICT_CHUNK * cin)
        .map(|chunk| -> Result<Vec<f32>, ModelError> {
            let x = pixel_input(params, chunk)?;
            Ok(core_forward(params, &x)?.0.into_data())
        })
        .collect::<Result<_, _>>()?;
    Ok(chunks.concat())
}

/// Model 1 on pixel-major RGB values (`pixels[p * 3 + c]`), returning
/// pixel-major predictions on the [0, 255] scale (unclamped).
pub fn model1_forward_pixels(params: &NetworkParams, rgb_pixels: &[f32]) -> Result<Vec<f32>, ModelError> {
    let mut out = core_pixels_normalized(params, rgb_pixels)?;
    for v in &mut out {
        *v *= SCALE;
    }
    Ok(out)
}

fn check_channels(stack: &SpectralStack, expected: usize) -> Result<(), ModelError> {
    if stack.channels() != expected {
        return Err(ModelError::Channels {
            expected,
            actual: stack.channels(),
        });
    }
    Ok(())
}

pub fn model1_predict(params: &NetworkParams, rgb: &SpectralStack) -> Result<SpectralStack, ModelError> {
    check_arch(params, ArchId::Model1)?;
    check_channels(rgb, params.config().spectral_in)?;
    let out = model1_forward_pixels(params, &rgb.to_pixels())?;
    Ok(SpectralStack::from_pixels(
        rgb.width(),
        rgb.height(),
        params.config().wavelengths_nm.clone(),
        &out,
    )?)
}

/// Mean squared error on the [0, 255] scale over a pixel batch, with its
/// gradient for every parameter entry.
pub fn model1_loss_grad(
    params: &NetworkParams,
    rgb_pixels: &[f32],
    target_pixels: &[f32],
) -> Result<(f64, Vec<Tensor>), ModelError> {
    let x = pixel_input(params, rgb_pixels)?;
    let n = x.shape()[0];
    let cout = params.config().spectral_out;
    let (out, trace) = core_forward(params, &x)?;
    let pred = Tensor::new(out.shape().to_vec(), out.data().iter().map(|v| v * SCALE).collect())?;
    let target = Tensor::from_slice(&[n, 1, cout], target_pixels)?;
    let (loss, mut g) = l2_loss(&pred, &target)?;
    for v in g.data_mut() {
        *v *= SCALE;
    }
    let mut grads = zero_grads(params);
    core_backward(params, &trace, &g, &mut grads)?;
    Ok((loss, grads))
}

/// Pixel-major `[P, C]` to band-sequential `[1, C, H, W]`.
fn to_image(pixels: &[f32], c: usize, h: usize, w: usize) -> Tensor {
    let plane = h * w;
    let mut data = vec![0f32; plane * c];
    for p in 0..plane {
        for b in 0..c {
            data[b * plane + p] = pixels[p * c + b];
        }
    }
    Tensor::new(vec![1, c, h, w], data).expect("sizes agree")
}

fn to_pixels(img: &Tensor) -> Tensor {
    let (c, plane) = (img.shape()[1], img.shape()[2] * img.shape()[3]);
    let mut data = vec![0f32; plane * c];
    for (i, &v) in img.data().iter().enumerate() {
        data[(i % plane) * c + i / plane] = v;
    }
    Tensor::new(vec![plane, 1, c], data).expect("sizes agree")
}

struct MergeTrace {
    prod: Cache,
    cat: Cache,
    merge: Cache,
}

fn check_model2_inputs(
    params: &NetworkParams,
    rgb: &SpectralStack,
    d_hsi: &DensityMap,
    sparse: &SpectralStack,
) -> Result<(), ModelError> {
    check_arch(params, ArchId::Model2)?;
    let cfg = params.config();
    check_channels(rgb, cfg.spectral_in)?;
    check_channels(sparse, cfg.spectral_out)?;
    let dims = [
        ("rgb", rgb.width(), rgb.height()),
        ("density", d_hsi.width(), d_hsi.height()),
        ("sparse", sparse.width(), sparse.height()),
    ];
    if dims.iter().any(|d| (d.1, d.2) != (rgb.width(), rgb.height())) {
        return Err(ModelError::Dims(
            dims.iter()
                .map(|(n, w, h)| format!("{n} {w}x{h}"))
                .collect::<Vec<_>>()
                .join(", "),
        ));
    }
    Ok(())
}

/// Merge stage on the normalized core prediction `core_img` ([1, C, H, W]).
fn merge_forward(
    params: &NetworkParams,
    core_img: &Tensor,
    d_hsi: &DensityMap,
    sparse: &SpectralStack,
) -> Result<(Tensor, MergeTrace), ModelError> {
    let cfg = params.config();
    let c = cfg.spectral_out;
    let (h, w) = (d_hsi.height(), d_hsi.width());
    let density = match cfg.merge_density {
        MergeDensity::Hsi => d_hsi.clone(),
        MergeDensity::Rgb => d_hsi.complement(),
    };
    let d = Tensor::from_slice(&[1, 1, h, w], density.data())?;
    let (prod, prod_c) = forward(&LayerSpec::elementwise_product(), &[core_img, &d], &Default::default())?;
    let sp = Tensor::new(vec![1, c, h, w], sparse.data().iter().map(|v| v / SCALE).collect())?;
    let (cat, cat_c) = forward(&LayerSpec::concat(c, c), &[&sp, &prod], &Default::default())?;
    let merge = cfg.merge_layer();
    let (m, merge_c) = forward(&merge, &[&cat], &params.layer_params(&format!("{MERGE_PREFIX}conv")))?;
    let (out, _) = forward(&LayerSpec::residual_add(), &[core_img, &m], &Default::default())?;
    Ok((
        out,
        MergeTrace {
            prod: prod_c,
            cat: cat_c,
            merge: merge_c,
        },
    ))
}

/// Returns the gradient with respect to the core image.
fn merge_backward(
    params: &NetworkParams,
    trace: &MergeTrace,
    grad_out: &Tensor,
    grads: &mut [Tensor],
) -> Result<Tensor, ModelError> {
    let c = params.config().spectral_out;
    let (mut g_cat, lp) = backward(&params.config().merge_layer(), grad_out, &trace.merge)?;
    accumulate(params, &format!("{MERGE_PREFIX}conv"), lp.weight, lp.bias, grads);
    let (mut parts, _) = backward(&LayerSpec::concat(c, c), &g_cat.remove(0), &trace.cat)?;
    let (mut g_prod, _) = backward(&LayerSpec::elementwise_product(), &parts.remove(1), &trace.prod)?;
    let mut g_core = g_prod.remove(0);
    add_into(&mut g_core, grad_out);
    Ok(g_core)
}

pub fn model2_predict(
    params: &NetworkParams,
    rgb: &SpectralStack,
    d_hsi: &DensityMap,
    sparse: &SpectralStack,
) -> Result<SpectralStack, ModelError> {
    check_model2_inputs(params, rgb, d_hsi, sparse)?;
    let c = params.config().spectral_out;
    let core = core_pixels_normalized(params, &rgb.to_pixels())?;
    let core_img = to_image(&core, c, rgb.height(), rgb.width());
    let (out, _) = merge_forward(params, &core_img, d_hsi, sparse)?;
    Ok(SpectralStack::new(
        rgb.width(),
        rgb.height(),
        params.config().wavelengths_nm.clone(),
        out.data().iter().map(|v| v * SCALE).collect(),
    )?)
}

/// Model 2 inputs for one training image.
#[derive(Debug, Clone, Copy)]
pub struct Model2Inputs<'a> {
    pub rgb: &'a SpectralStack,
    pub d_hsi: &'a DensityMap,
    pub sparse: &'a SpectralStack,
    pub target: &'a SpectralStack,
}

/// Mean squared error of a Model 2 prediction on one image. With
/// `train_core == false` the core backward pass is skipped and core
/// gradients stay zero.
pub fn model2_loss_grad(
    params: &NetworkParams,
    inputs: Model2Inputs<'_>,
    train_core: bool,
) -> Result<(f64, Vec<Tensor>), ModelError> {
    let Model2Inputs { rgb, d_hsi, sparse, target } = inputs;
    check_model2_inputs(params, rgb, d_hsi, sparse)?;
    check_channels(target, params.config().spectral_out)?;
    if !target.same_dims(rgb) {
        return Err(ModelError::Dims(format!(
            "target {}x{} vs rgb {}x{}",
            target.width(),
            target.height(),
            rgb.width(),
            rgb.height()
        )));
    }
    let c = params.config().spectral_out;
    let (h, w) = (rgb.height(), rgb.width());
    let x = pixel_input(params, &rgb.to_pixels())?;
    let (core, core_trace) = core_forward(params, &x)?;
    let core_img = to_image(core.data(), c, h, w);
    let (out, trace) = merge_forward(params, &core_img, d_hsi, sparse)?;
    let pred = Tensor::new(out.shape().to_vec(), out.data().iter().map(|v| v * SCALE).collect())?;
    let tgt = Tensor::from_slice(&[1, c, h, w], target.data())?;
    let (loss, mut g) = l2_loss(&pred, &tgt)?;
    for v in g.data_mut() {
        *v *= SCALE;
    }
    let mut grads = zero_grads(params);
    let g_core = merge_backward(params, &trace, &g, &mut grads)?;
    if train_core {
        core_backward(params, &core_trace, &to_pixels(&g_core), &mut grads)?;
    }
    Ok((loss, grads))
}
