//! Direct loop kernels kept as an oracle for the GEMM-based ones.

use super::{LayerParams, LayerSpec, Tensor, TensorError};

pub(crate) fn conv1d_forward(spec: &LayerSpec, x: &Tensor, params: &LayerParams) -> Result<Tensor, TensorError> {
    let (n, c_in, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let out_len = spec.output_length(len)?;
    let c_out = spec.out_channels;
    let (k, s, p) = (spec.kernel_size, spec.stride, spec.padding as isize);
    let w = params.weight.as_ref().expect("checked").data();
    let mut out = vec![0f32; n * c_out * out_len];
    let xd = x.data();
    for b in 0..n {
        for o in 0..c_out {
            let row = &mut out[(b * c_out + o) * out_len..(b * c_out + o + 1) * out_len];
            if let Some(bias) = &params.bias {
                row.fill(bias.data()[o]);
            }
            for c in 0..c_in {
                let xin = &xd[(b * c_in + c) * len..(b * c_in + c + 1) * len];
                for j in 0..k {
                    let wv = w[(o * c_in + c) * k + j];
                    for (t, r) in row.iter_mut().enumerate() {
                        let idx = (t * s) as isize + j as isize - p;
                        if idx >= 0 && (idx as usize) < len {
                            *r += wv * xin[idx as usize];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, c_out, out_len], out)
}

pub(crate) fn conv1d_backward(
    spec: &LayerSpec,
    g: &Tensor,
    x: &Tensor,
    w: &Tensor,
) -> Result<(Vec<Tensor>, LayerParams), TensorError> {
    let w = w.data();
    let (n, c_in, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c_out, out_len) = (g.shape()[1], g.shape()[2]);
    let (k, s, p) = (spec.kernel_size, spec.stride, spec.padding as isize);
    let xd = x.data();
    let gd = g.data();
    let mut gx = vec![0f32; xd.len()];
    let mut gw = vec![0f32; w.len()];
    let mut gb = vec![0f32; c_out];
    for b in 0..n {
        for o in 0..c_out {
            let grow = &gd[(b * c_out + o) * out_len..(b * c_out + o + 1) * out_len];
            gb[o] += grow.iter().sum::<f32>();
            for c in 0..c_in {
                let base = (b * c_in + c) * len;
                for j in 0..k {
                    let widx = (o * c_in + c) * k + j;
                    let wv = w[widx];
                    let mut acc = 0f32;
                    for (t, &gv) in grow.iter().enumerate() {
                        let idx = (t * s) as isize + j as isize - p;
                        if idx >= 0 && (idx as usize) < len {
                            let i = base + idx as usize;
                            acc += gv * xd[i];
                            gx[i] += wv * gv;
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    Ok((
        vec![Tensor::new(x.shape().to_vec(), gx)?],
        LayerParams {
            weight: Some(Tensor::new(spec.weight_shape().expect("conv"), gw)?),
            bias: spec.has_bias.then(|| Tensor::new(vec![c_out], gb)).transpose()?,
        },
    ))
}

pub(crate) fn tconv1d_forward(spec: &LayerSpec, x: &Tensor, params: &LayerParams) -> Result<Tensor, TensorError> {
    let (n, c_in, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let out_len = spec.output_length(len)?;
    let c_out = spec.out_channels;
    let (k, s, p) = (spec.kernel_size, spec.stride, spec.padding as isize);
    let w = params.weight.as_ref().expect("checked").data();
    let xd = x.data();
    let mut out = vec![0f32; n * c_out * out_len];
    for b in 0..n {
        for o in 0..c_out {
            let row = &mut out[(b * c_out + o) * out_len..(b * c_out + o + 1) * out_len];
            if let Some(bias) = &params.bias {
                row.fill(bias.data()[o]);
            }
            for c in 0..c_in {
                let xin = &xd[(b * c_in + c) * len..(b * c_in + c + 1) * len];
                for j in 0..k {
                    let wv = w[(c * c_out + o) * k + j];
                    for (i, &xv) in xin.iter().enumerate() {
                        let idx = (i * s) as isize + j as isize - p;
                        if idx >= 0 && (idx as usize) < out_len {
                            row[idx as usize] += wv * xv;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, c_out, out_len], out)
}

pub(crate) fn tconv1d_backward(
    spec: &LayerSpec,
    g: &Tensor,
    x: &Tensor,
    w: &Tensor,
) -> Result<(Vec<Tensor>, LayerParams), TensorError> {
    let w = w.data();
    let (n, c_in, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c_out, out_len) = (g.shape()[1], g.shape()[2]);
    let (k, s, p) = (spec.kernel_size, spec.stride, spec.padding as isize);
    let xd = x.data();
    let gd = g.data();
    let mut gx = vec![0f32; xd.len()];
    let mut gw = vec![0f32; w.len()];
    let mut gb = vec![0f32; c_out];
    for b in 0..n {
        for o in 0..c_out {
            let grow = &gd[(b * c_out + o) * out_len..(b * c_out + o + 1) * out_len];
            gb[o] += grow.iter().sum::<f32>();
            for c in 0..c_in {
                let base = (b * c_in + c) * len;
                for j in 0..k {
                    let widx = (c * c_out + o) * k + j;
                    let wv = w[widx];
                    let mut acc = 0f32;
                    for i in 0..len {
                        let idx = (i * s) as isize + j as isize - p;
                        if idx >= 0 && (idx as usize) < out_len {
                            let gv = grow[idx as usize];
                            acc += gv * xd[base + i];
                            gx[base + i] += wv * gv;
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    Ok((
        vec![Tensor::new(x.shape().to_vec(), gx)?],
        LayerParams {
            weight: Some(Tensor::new(spec.weight_shape().expect("conv"), gw)?),
            bias: spec.has_bias.then(|| Tensor::new(vec![c_out], gb)).transpose()?,
        },
    ))
}

pub(crate) fn conv2d_forward(spec: &LayerSpec, x: &Tensor, params: &LayerParams) -> Result<Tensor, TensorError> {
    let (n, c_in, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let oh = spec.output_length(h)?;
    let ow = spec.output_length(wd)?;
    let c_out = spec.out_channels;
    let (k, s, p) = (spec.kernel_size, spec.stride, spec.padding as isize);
    let w = params.weight.as_ref().expect("checked").data();
    let xd = x.data();
    let mut out = vec![0f32; n * c_out * oh * ow];
    for b in 0..n {
        for o in 0..c_out {
            let plane = &mut out[(b * c_out + o) * oh * ow..(b * c_out + o + 1) * oh * ow];
            if let Some(bias) = &params.bias {
                plane.fill(bias.data()[o]);
            }
            for c in 0..c_in {
                let xin = &xd[(b * c_in + c) * h * wd..(b * c_in + c + 1) * h * wd];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = w[((o * c_in + c) * k + ky) * k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        for y in 0..oh {
                            let iy = (y * s) as isize + ky as isize - p;
                            if iy < 0 || iy as usize >= h {
                                continue;
                            }
                            let xrow = &xin[iy as usize * wd..(iy as usize + 1) * wd];
                            let orow = &mut plane[y * ow..(y + 1) * ow];
                            for (xo, r) in orow.iter_mut().enumerate() {
                                let ix = (xo * s) as isize + kx as isize - p;
                                if ix >= 0 && (ix as usize) < wd {
                                    *r += wv * xrow[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, c_out, oh, ow], out)
}

pub(crate) fn conv2d_backward(
    spec: &LayerSpec,
    g: &Tensor,
    x: &Tensor,
    w: &Tensor,
) -> Result<(Vec<Tensor>, LayerParams), TensorError> {
    let w = w.data();
    let (n, c_in, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (c_out, oh, ow) = (g.shape()[1], g.shape()[2], g.shape()[3]);
    let (k, s, p) = (spec.kernel_size, spec.stride, spec.padding as isize);
    let xd = x.data();
    let gd = g.data();
    let mut gx = vec![0f32; xd.len()];
    let mut gw = vec![0f32; w.len()];
    let mut gb = vec![0f32; c_out];
    for b in 0..n {
        for o in 0..c_out {
            let gplane = &gd[(b * c_out + o) * oh * ow..(b * c_out + o + 1) * oh * ow];
            gb[o] += gplane.iter().sum::<f32>();
            for c in 0..c_in {
                let base = (b * c_in + c) * h * wd;
                for ky in 0..k {
                    for kx in 0..k {
                        let widx = ((o * c_in + c) * k + ky) * k + kx;
                        let wv = w[widx];
                        let mut acc = 0f32;
                        for y in 0..oh {
                            let iy = (y * s) as isize + ky as isize - p;
                            if iy < 0 || iy as usize >= h {
                                continue;
                            }
                            let row_base = base + iy as usize * wd;
                            for xo in 0..ow {
                                let ix = (xo * s) as isize + kx as isize - p;
                                if ix >= 0 && (ix as usize) < wd {
                                    let gv = gplane[y * ow + xo];
                                    let i = row_base + ix as usize;
                                    acc += gv * xd[i];
                                    gx[i] += wv * gv;
                                }
                            }
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
    Ok((
        vec![Tensor::new(x.shape().to_vec(), gx)?],
        LayerParams {
            weight: Some(Tensor::new(spec.weight_shape().expect("conv"), gw)?),
            bias: spec.has_bias.then(|| Tensor::new(vec![c_out], gb)).transpose()?,
        },
    ))
}

