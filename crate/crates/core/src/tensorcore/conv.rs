//! Convolution kernels lowered to matrix products (im2col + sgemm).

use super::layer::{expect_rank, mismatch};
use super::{LayerParams, LayerSpec, Tensor, TensorError};

/// `c = a * b + beta * c` on strided row/column views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    (m, k, n): (usize, usize, usize),
    (a, rsa, csa): (&[f32], usize, usize),
    (b, rsb, csb): (&[f32], usize, usize),
    beta: f32,
    (c, rsc, csc): (&mut [f32], usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    if k > 0 {
        assert!(last(m, k, rsa, csa) < a.len() && last(k, n, rsb, csb) < b.len());
    }
    assert!(last(m, n, rsc, csc) < c.len());
    // SAFETY: every index reachable through the given strides is in bounds (checked above).
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// 2D sliding-window geometry; 1D convolutions use `h = kh = 1`.
#[derive(Clone, Copy)]
struct Geom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    s: usize,
    ph: usize,
    pw: usize,
    oh: usize,
    ow: usize,
}

impl Geom {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.n * self.oh * self.ow
    }

    /// Calls `f(row, col, input_index)` for every in-bounds tap.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        for c in 0..self.c {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    for b in 0..self.n {
                        let plane = (b * self.c + c) * self.h * self.w;
                        for y in 0..self.oh {
                            let iy = (y * self.s + ky) as isize - self.ph as isize;
                            if iy < 0 || iy as usize >= self.h {
                                continue;
                            }
                            let col0 = (b * self.oh + y) * self.ow;
                            let in_row = plane + iy as usize * self.w;
                            for x in 0..self.ow {
                                let ix = (x * self.s + kx) as isize - self.pw as isize;
                                if ix >= 0 && (ix as usize) < self.w {
                                    f(row, col0 + x, in_row + ix as usize);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &[f32]) -> Vec<f32> {
        let cols = self.cols();
        let mut col = vec![0f32; self.rows() * cols];
        self.for_each_tap(|r, c, i| col[r * cols + c] = x[i]);
        col
    }

    fn col2im(&self, col: &[f32]) -> Vec<f32> {
        let cols = self.cols();
        let mut x = vec![0f32; self.n * self.c * self.h * self.w];
        self.for_each_tap(|r, c, i| x[i] += col[r * cols + c]);
        x
    }
}

/// `[n, o, q]` from an `[o, n*q]` matrix, plus bias.
fn unfold_output(mat: &[f32], n: usize, o: usize, q: usize, bias: Option<&Tensor>) -> Vec<f32> {
    let mut out = vec![0f32; n * o * q];
    for oc in 0..o {
        let bv = bias.map_or(0.0, |b| b.data()[oc]);
        for b in 0..n {
            let src = &mat[oc * n * q + b * q..oc * n * q + (b + 1) * q];
            let dst = &mut out[(b * o + oc) * q..(b * o + oc + 1) * q];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = s + bv;
            }
        }
    }
    out
}

/// Inverse of [`unfold_output`] without bias: `[n, o, q]` to `[o, n*q]`.
fn fold_channels(t: &[f32], n: usize, o: usize, q: usize) -> Vec<f32> {
    let mut mat = vec![0f32; n * o * q];
    for b in 0..n {
        for oc in 0..o {
            mat[oc * n * q + b * q..oc * n * q + (b + 1) * q]
                .copy_from_slice(&t[(b * o + oc) * q..(b * o + oc + 1) * q]);
        }
    }
    mat
}

fn grouped_geom(spec: &LayerSpec, x: &Tensor) -> Result<Geom, TensorError> {
    let kind = spec.kind;
    let two_d = kind == super::LayerKind::Conv2d;
    expect_rank(kind, x, if two_d { 4 } else { 3 })?;
    let sh = x.shape();
    if sh[1] != spec.in_channels {
        return Err(mismatch(kind, 1, spec.in_channels, sh[1]));
    }
    let (k, p) = (spec.kernel_size, spec.padding);
    Ok(if two_d {
        Geom {
            n: sh[0],
            c: sh[1],
            h: sh[2],
            w: sh[3],
            kh: k,
            kw: k,
            s: spec.stride,
            ph: p,
            pw: p,
            oh: spec.output_length(sh[2])?,
            ow: spec.output_length(sh[3])?,
        }
    } else {
        Geom {
            n: sh[0],
            c: sh[1],
            h: 1,
            w: sh[2],
            kh: 1,
            kw: k,
            s: spec.stride,
            ph: 0,
            pw: p,
            oh: 1,
            ow: spec.output_length(sh[2])?,
        }
    })
}

fn out_shape(spec: &LayerSpec, g: &Geom) -> Vec<usize> {
    if spec.kind == super::LayerKind::Conv2d {
        vec![g.n, spec.out_channels, g.oh, g.ow]
    } else {
        vec![g.n, spec.out_channels, g.ow]
    }
}

/// Forward pass of `conv1d` and `conv2d`.
pub(super) fn conv_forward(spec: &LayerSpec, x: &Tensor, params: &LayerParams) -> Result<Tensor, TensorError> {
    let g = grouped_geom(spec, x)?;
    let (o, kk, m) = (spec.out_channels, g.rows(), g.cols());
    let w = params.weight.as_ref().expect("checked").data();
    let col = g.im2col(x.data());
    let mut mat = vec![0f32; o * m];
    gemm((o, kk, m), (w, kk, 1), (&col, m, 1), 0.0, (&mut mat, m, 1));
    let out = unfold_output(&mat, g.n, o, g.oh * g.ow, params.bias.as_ref());
    Tensor::new(out_shape(spec, &g), out)
}

pub(super) fn conv_backward(
    spec: &LayerSpec,
    grad: &Tensor,
    x: &Tensor,
    w: &Tensor,
) -> Result<(Vec<Tensor>, LayerParams), TensorError> {
    let g = grouped_geom(spec, x)?;
    let (o, kk, m) = (spec.out_channels, g.rows(), g.cols());
    let gmat = fold_channels(grad.data(), g.n, o, g.oh * g.ow);
    let gb: Vec<f32> = gmat.chunks_exact(m.max(1)).map(|r| r.iter().sum()).collect();
    let col = g.im2col(x.data());
    let mut gw = vec![0f32; o * kk];
    gemm((o, m, kk), (&gmat, m, 1), (&col, 1, m), 0.0, (&mut gw, kk, 1));
    let mut gcol = vec![0f32; kk * m];
    gemm((kk, o, m), (w.data(), 1, kk), (&gmat, m, 1), 0.0, (&mut gcol, m, 1));
    let gx = g.col2im(&gcol);
    Ok((
        vec![Tensor::new(x.shape().to_vec(), gx)?],
        LayerParams {
            weight: Some(Tensor::new(spec.weight_shape().expect("conv"), gw)?),
            bias: spec.has_bias.then(|| Tensor::new(vec![o], gb)).transpose()?,
        },
    ))
}

struct TGeom {
    n: usize,
    cin: usize,
    cout: usize,
    len: usize,
    out_len: usize,
    k: usize,
    s: usize,
    p: usize,
}

impl TGeom {
    fn new(spec: &LayerSpec, x: &Tensor) -> Result<Self, TensorError> {
        expect_rank(spec.kind, x, 3)?;
        let sh = x.shape();
        if sh[1] != spec.in_channels {
            return Err(mismatch(spec.kind, 1, spec.in_channels, sh[1]));
        }
        Ok(Self {
            n: sh[0],
            cin: sh[1],
            cout: spec.out_channels,
            len: sh[2],
            out_len: spec.output_length(sh[2])?,
            k: spec.kernel_size,
            s: spec.stride,
            p: spec.padding,
        })
    }

    /// Calls `f(y_index, out_index)` for every `(o, j, b, i)` tap whose
    /// output position falls inside the cropped output.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let nl = self.n * self.len;
        for o in 0..self.cout {
            for j in 0..self.k {
                let row = (o * self.k + j) * nl;
                for b in 0..self.n {
                    let out_row = (b * self.cout + o) * self.out_len;
                    for i in 0..self.len {
                        let t = (i * self.s + j) as isize - self.p as isize;
                        if t >= 0 && (t as usize) < self.out_len {
                            f(row + b * self.len + i, out_row + t as usize);
                        }
                    }
                }
            }
        }
    }
}

/// Transposed 1D convolution: `Y = W^T X` per input position, then each
/// column of `Y` is scattered onto the strided output grid.
pub(super) fn tconv_forward(spec: &LayerSpec, x: &Tensor, params: &LayerParams) -> Result<Tensor, TensorError> {
    let g = TGeom::new(spec, x)?;
    let (nl, ok) = (g.n * g.len, g.cout * g.k);
    let xmat = fold_channels(x.data(), g.n, g.cin, g.len);
    let w = params.weight.as_ref().expect("checked").data();
    let mut y = vec![0f32; ok * nl];
    gemm((ok, g.cin, nl), (w, 1, ok), (&xmat, nl, 1), 0.0, (&mut y, nl, 1));
    let mut out = vec![0f32; g.n * g.cout * g.out_len];
    if let Some(bias) = &params.bias {
        for (r, row) in out.chunks_exact_mut(g.out_len).enumerate() {
            row.fill(bias.data()[r % g.cout]);
        }
    }
    g.for_each_tap(|yi, oi| out[oi] += y[yi]);
    Tensor::new(vec![g.n, g.cout, g.out_len], out)
}

pub(super) fn tconv_backward(
    spec: &LayerSpec,
    grad: &Tensor,
    x: &Tensor,
    w: &Tensor,
) -> Result<(Vec<Tensor>, LayerParams), TensorError> {
    let g = TGeom::new(spec, x)?;
    let (nl, ok) = (g.n * g.len, g.cout * g.k);
    let gd = grad.data();
    let mut gy = vec![0f32; ok * nl];
    g.for_each_tap(|yi, oi| gy[yi] = gd[oi]);
    let mut gb = vec![0f32; g.cout];
    for (r, row) in gd.chunks_exact(g.out_len).enumerate() {
        gb[r % g.cout] += row.iter().sum::<f32>();
    }
    let xmat = fold_channels(x.data(), g.n, g.cin, g.len);
    let mut gx_mat = vec![0f32; g.cin * nl];
    gemm((g.cin, ok, nl), (w.data(), ok, 1), (&gy, nl, 1), 0.0, (&mut gx_mat, nl, 1));
    let mut gw = vec![0f32; g.cin * ok];
    gemm((g.cin, nl, ok), (&xmat, nl, 1), (&gy, 1, nl), 0.0, (&mut gw, ok, 1));
    let gx = unfold_output(&gx_mat, g.n, g.cin, g.len, None);
    Ok((
        vec![Tensor::new(x.shape().to_vec(), gx)?],
        LayerParams {
            weight: Some(Tensor::new(spec.weight_shape().expect("conv"), gw)?),
            bias: spec.has_bias.then(|| Tensor::new(vec![g.cout], gb)).transpose()?,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::super::naive;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn close(a: &Tensor, b: &Tensor) {
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-4 * (1.0 + y.abs()), "{x} vs {y}");
        }
    }

    fn compare(spec: LayerSpec, xshape: &[usize], seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(xshape, &mut rng);
        let w = random(&spec.weight_shape().unwrap(), &mut rng);
        let params = LayerParams::new(w.clone(), spec.bias_shape().map(|s| random(&s, &mut rng)));
        let (fast, slow) = match spec.kind {
            super::super::LayerKind::Tconv1d => (
                tconv_forward(&spec, &x, &params).unwrap(),
                naive::tconv1d_forward(&spec, &x, &params).unwrap(),
            ),
            super::super::LayerKind::Conv1d => (
                conv_forward(&spec, &x, &params).unwrap(),
                naive::conv1d_forward(&spec, &x, &params).unwrap(),
            ),
            _ => (
                conv_forward(&spec, &x, &params).unwrap(),
                naive::conv2d_forward(&spec, &x, &params).unwrap(),
            ),
        };
        close(&fast, &slow);
        let g = random(fast.shape(), &mut rng);
        let (fb, sb) = match spec.kind {
            super::super::LayerKind::Tconv1d => (
                tconv_backward(&spec, &g, &x, &w).unwrap(),
                naive::tconv1d_backward(&spec, &g, &x, &w).unwrap(),
            ),
            super::super::LayerKind::Conv1d => (
                conv_backward(&spec, &g, &x, &w).unwrap(),
                naive::conv1d_backward(&spec, &g, &x, &w).unwrap(),
            ),
            _ => (
                conv_backward(&spec, &g, &x, &w).unwrap(),
                naive::conv2d_backward(&spec, &g, &x, &w).unwrap(),
            ),
        };
        close(&fb.0[0], &sb.0[0]);
        close(fb.1.weight.as_ref().unwrap(), sb.1.weight.as_ref().unwrap());
        assert_eq!(fb.1.bias.is_some(), sb.1.bias.is_some());
        if let (Some(a), Some(b)) = (&fb.1.bias, &sb.1.bias) {
            close(a, b);
        }
    }

    #[test]
    fn matches_direct_loops() {
        compare(LayerSpec::conv1d(3, 4, 3, 1, 1), &[5, 3, 8], 1);
        compare(LayerSpec::conv1d(2, 3, 3, 2, 0), &[2, 2, 9], 2);
        compare(LayerSpec::conv1d(2, 3, 5, 1, 2).without_bias(), &[3, 2, 4], 3);
        compare(LayerSpec::tconv1d(1, 4, 4, 2, 1), &[6, 1, 3], 4);
        compare(LayerSpec::tconv1d(4, 4, 4, 2, 1), &[3, 4, 6], 5);
        compare(LayerSpec::tconv1d(4, 1, 3, 1, 1), &[3, 4, 24], 6);
        compare(LayerSpec::tconv1d(2, 3, 3, 2, 0), &[2, 2, 5], 7);
        compare(LayerSpec::conv2d(6, 3, 5, 1, 2), &[1, 6, 7, 9], 8);
        compare(LayerSpec::conv2d(2, 2, 3, 2, 1), &[2, 2, 6, 5], 9);
    }
}
