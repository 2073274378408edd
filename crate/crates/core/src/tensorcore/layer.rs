//! Layer kernels with hand-written backward passes.
//!
//! Layouts: `conv1d`/`tconv1d` take `[batch, channels, length]`, `conv2d`
//! takes `[batch, channels, height, width]`. The element-wise kinds accept any
//! rank. `concat` and `elementwise-product` work on axis 1; the product
//! broadcasts its second operand when that operand has a single channel.

use serde::{Deserialize, Serialize};

use super::{conv, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Conv1d,
    Tconv1d,
    Conv2d,
    Relu,
    ResidualAdd,
    Concat,
    ElementwiseProduct,
}

impl LayerKind {
    pub fn arity(self) -> usize {
        match self {
            LayerKind::ResidualAdd | LayerKind::Concat | LayerKind::ElementwiseProduct => 2,
            _ => 1,
        }
    }

    pub fn has_weights(self) -> bool {
        matches!(
            self,
            LayerKind::Conv1d | LayerKind::Tconv1d | LayerKind::Conv2d
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernel_size: usize,
    pub stride: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub padding: usize,
    pub has_bias: bool,
}

impl LayerSpec {
    pub fn conv1d(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kind: LayerKind::Conv1d,
            kernel_size: kernel,
            stride,
            in_channels,
            out_channels,
            padding,
            has_bias: true,
        }
    }

    pub fn tconv1d(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kind: LayerKind::Tconv1d,
            ..Self::conv1d(in_channels, out_channels, kernel, stride, padding)
        }
    }

    pub fn conv2d(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kind: LayerKind::Conv2d,
            ..Self::conv1d(in_channels, out_channels, kernel, stride, padding)
        }
    }

    fn elementwise(kind: LayerKind) -> Self {
        Self {
            kind,
            kernel_size: 1,
            stride: 1,
            in_channels: 0,
            out_channels: 0,
            padding: 0,
            has_bias: false,
        }
    }

    pub fn relu() -> Self {
        Self::elementwise(LayerKind::Relu)
    }

    pub fn residual_add() -> Self {
        Self::elementwise(LayerKind::ResidualAdd)
    }

    /// Channel concatenation of an `a`-channel and a `b`-channel input.
    pub fn concat(a: usize, b: usize) -> Self {
        Self {
            in_channels: a,
            out_channels: a + b,
            ..Self::elementwise(LayerKind::Concat)
        }
    }

    pub fn elementwise_product() -> Self {
        Self::elementwise(LayerKind::ElementwiseProduct)
    }

    pub fn without_bias(mut self) -> Self {
        self.has_bias = false;
        self
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        if self.stride == 0 || self.kernel_size == 0 {
            return Err(TensorError::InvalidSpec(format!(
                "stride and kernel_size must be >= 1 (got stride={}, kernel={})",
                self.stride, self.kernel_size
            )));
        }
        if self.kind.has_weights() && (self.in_channels == 0 || self.out_channels == 0) {
            return Err(TensorError::InvalidSpec(
                "convolution needs nonzero channel counts".into(),
            ));
        }
        Ok(())
    }

    /// Output length of a 1D (transposed) convolution on `len` inputs.
    pub fn output_length(&self, len: usize) -> Result<usize, TensorError> {
        match self.kind {
            LayerKind::Tconv1d => {
                let full = self.stride * (len.max(1) - 1) + self.kernel_size;
                full.checked_sub(2 * self.padding)
                    .filter(|&n| n > 0 && len > 0)
                    .ok_or_else(|| TensorError::InvalidSpec(format!(
                        "tconv1d crop 2*{} exceeds full length {full}",
                        self.padding
                    )))
            }
            LayerKind::Conv1d | LayerKind::Conv2d => {
                let padded = len + 2 * self.padding;
                if padded < self.kernel_size {
                    return Err(TensorError::InvalidSpec(format!(
                        "kernel {} larger than padded length {padded}",
                        self.kernel_size
                    )));
                }
                Ok((padded - self.kernel_size) / self.stride + 1)
            }
            _ => Ok(len),
        }
    }

    /// Expected weight shape, if the layer carries weights.
    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        let (i, o, k) = (self.in_channels, self.out_channels, self.kernel_size);
        match self.kind {
            LayerKind::Conv1d => Some(vec![o, i, k]),
            LayerKind::Tconv1d => Some(vec![i, o, k]),
            LayerKind::Conv2d => Some(vec![o, i, k, k]),
            _ => None,
        }
    }

    pub fn bias_shape(&self) -> Option<Vec<usize>> {
        (self.kind.has_weights() && self.has_bias).then(|| vec![self.out_channels])
    }

    /// Fan-in used for He-style initialization.
    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv1d => self.in_channels * self.kernel_size,
            // each output sample of a strided transposed conv sees about k/s taps per channel
            LayerKind::Tconv1d => {
                self.in_channels * self.kernel_size.div_ceil(self.stride)
            }
            LayerKind::Conv2d => self.in_channels * self.kernel_size * self.kernel_size,
            _ => 1,
        }
    }
}

/// Weight/bias pair for one layer. Parameter-free layers use the default.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerParams {
    pub weight: Option<Tensor>,
    pub bias: Option<Tensor>,
}

impl LayerParams {
    pub fn new(weight: Tensor, bias: Option<Tensor>) -> Self {
        Self {
            weight: Some(weight),
            bias,
        }
    }
}

/// State saved by [`forward`] for the matching [`backward`] call.
#[derive(Debug, Clone)]
pub struct Cache {
    spec: LayerSpec,
    input_shapes: Vec<Vec<usize>>,
    inputs: Vec<Tensor>,
    weight: Option<Tensor>,
    out_shape: Vec<usize>,
}

impl Cache {
    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.out_shape
    }
}

pub(super) fn mismatch(layer: LayerKind, axis: usize, expected: usize, actual: usize) -> TensorError {
    TensorError::ShapeMismatch {
        layer,
        axis,
        expected,
        actual,
    }
}

pub(super) fn expect_rank(layer: LayerKind, t: &Tensor, rank: usize) -> Result<(), TensorError> {
    if t.shape().len() != rank {
        return Err(TensorError::RankMismatch {
            layer,
            expected: rank,
            actual: t.shape().len(),
        });
    }
    Ok(())
}

fn check_params(spec: &LayerSpec, params: &LayerParams) -> Result<(), TensorError> {
    if let Some(ws) = spec.weight_shape() {
        let w = params
            .weight
            .as_ref()
            .ok_or(TensorError::MissingParam { layer: spec.kind, what: "weight" })?;
        if w.shape() != ws.as_slice() {
            return Err(TensorError::ParamShape {
                layer: spec.kind,
                what: "weight",
                expected: ws,
                actual: w.shape().to_vec(),
            });
        }
    }
    match (spec.bias_shape(), params.bias.as_ref()) {
        (Some(bs), Some(b)) if b.shape() != bs.as_slice() => Err(TensorError::ParamShape {
            layer: spec.kind,
            what: "bias",
            expected: bs,
            actual: b.shape().to_vec(),
        }),
        (Some(_), None) => Err(TensorError::MissingParam { layer: spec.kind, what: "bias" }),
        _ => Ok(()),
    }
}

/// Runs one layer forward.
///
/// `inputs` holds one tensor for unary layers and two for `residual-add`,
/// `concat` and `elementwise-product`.
pub fn forward(
    spec: &LayerSpec,
    inputs: &[&Tensor],
    params: &LayerParams,
) -> Result<(Tensor, Cache), TensorError> {
    spec.validate()?;
    if inputs.len() != spec.kind.arity() {
        return Err(TensorError::Arity {
            layer: spec.kind,
            expected: spec.kind.arity(),
            actual: inputs.len(),
        });
    }
    check_params(spec, params)?;
    let out = match spec.kind {
        LayerKind::Conv1d | LayerKind::Conv2d => conv::conv_forward(spec, inputs[0], params)?,
        LayerKind::Tconv1d => conv::tconv_forward(spec, inputs[0], params)?,
        LayerKind::Relu => {
            let mut out = inputs[0].clone();
            for v in out.data_mut() {
                *v = v.max(0.0);
            }
            out
        }
        LayerKind::ResidualAdd => {
            let (a, b) = (inputs[0], inputs[1]);
            same_shape(spec.kind, a, b)?;
            let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
            Tensor::new(a.shape().to_vec(), data)?
        }
        LayerKind::Concat => concat_forward(spec, inputs[0], inputs[1])?,
        LayerKind::ElementwiseProduct => product_forward(inputs[0], inputs[1])?,
    };
    let keep_inputs = !matches!(spec.kind, LayerKind::ResidualAdd | LayerKind::Concat);
    let cache = Cache {
        spec: *spec,
        input_shapes: inputs.iter().map(|t| t.shape().to_vec()).collect(),
        // add and concat gradients do not depend on input values
        inputs: if keep_inputs {
            inputs.iter().map(|t| (*t).clone()).collect()
        } else {
            Vec::new()
        },
        weight: params.weight.clone(),
        out_shape: out.shape().to_vec(),
    };
    Ok((out, cache))
}

/// Backpropagates `grad_out` through the layer recorded in `cache`.
///
/// Returns one gradient per forward input, and weight/bias gradients for
/// convolutional layers.
pub fn backward(
    spec: &LayerSpec,
    grad_out: &Tensor,
    cache: &Cache,
) -> Result<(Vec<Tensor>, LayerParams), TensorError> {
    if cache.spec != *spec {
        return Err(TensorError::StaleCache(format!(
            "cache recorded {:?}, backward called with {:?}",
            cache.spec.kind, spec.kind
        )));
    }
    if grad_out.shape() != cache.out_shape.as_slice() {
        return Err(TensorError::StaleCache(format!(
            "grad_out shape {:?} does not match forward output {:?}",
            grad_out.shape(),
            cache.out_shape
        )));
    }
    match spec.kind {
        LayerKind::Conv1d | LayerKind::Conv2d => {
            conv::conv_backward(spec, grad_out, &cache.inputs[0], cached_weight(cache)?)
        }
        LayerKind::Tconv1d => conv::tconv_backward(spec, grad_out, &cache.inputs[0], cached_weight(cache)?),
        LayerKind::Relu => {
            let x = &cache.inputs[0];
            let data = x
                .data()
                .iter()
                .zip(grad_out.data())
                .map(|(&xi, &g)| if xi > 0.0 { g } else { 0.0 })
                .collect();
            Ok((vec![Tensor::new(x.shape().to_vec(), data)?], LayerParams::default()))
        }
        LayerKind::ResidualAdd => Ok((
            vec![grad_out.clone(), grad_out.clone()],
            LayerParams::default(),
        )),
        LayerKind::Concat => {
            let (ga, gb) =
                split_channels(grad_out, &cache.input_shapes[0], &cache.input_shapes[1])?;
            Ok((vec![ga, gb], LayerParams::default()))
        }
        LayerKind::ElementwiseProduct => {
            let (a, b) = (&cache.inputs[0], &cache.inputs[1]);
            let (ga, gb) = product_backward(a, b, grad_out)?;
            Ok((vec![ga, gb], LayerParams::default()))
        }
    }
}

fn cached_weight(cache: &Cache) -> Result<&Tensor, TensorError> {
    cache
        .weight
        .as_ref()
        .ok_or_else(|| TensorError::StaleCache("convolution cache without weight".into()))
}

fn same_shape(kind: LayerKind, a: &Tensor, b: &Tensor) -> Result<(), TensorError> {
    if a.shape().len() != b.shape().len() {
        return Err(TensorError::RankMismatch {
            layer: kind,
            expected: a.shape().len(),
            actual: b.shape().len(),
        });
    }
    for (axis, (&x, &y)) in a.shape().iter().zip(b.shape()).enumerate() {
        if x != y {
            return Err(mismatch(kind, axis, x, y));
        }
    }
    Ok(())
}

/// Splits a tensor's shape around axis 1 into (outer, channels, inner).
fn channel_split(kind: LayerKind, t: &Tensor) -> Result<(usize, usize, usize), TensorError> {
    if t.shape().len() < 2 {
        return Err(TensorError::RankMismatch {
            layer: kind,
            expected: 2,
            actual: t.shape().len(),
        });
    }
    let outer = t.shape()[0];
    let ch = t.shape()[1];
    let inner = t.shape()[2..].iter().product();
    Ok((outer, ch, inner))
}

fn concat_forward(spec: &LayerSpec, a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    let kind = LayerKind::Concat;
    let (oa, ca, ia) = channel_split(kind, a)?;
    let (ob, cb, ib) = channel_split(kind, b)?;
    if a.shape().len() != b.shape().len() {
        return Err(TensorError::RankMismatch {
            layer: kind,
            expected: a.shape().len(),
            actual: b.shape().len(),
        });
    }
    if oa != ob {
        return Err(mismatch(kind, 0, oa, ob));
    }
    for axis in 2..a.shape().len() {
        if a.shape()[axis] != b.shape()[axis] {
            return Err(mismatch(kind, axis, a.shape()[axis], b.shape()[axis]));
        }
    }
    debug_assert_eq!(ia, ib);
    if spec.in_channels != 0 && spec.in_channels != ca {
        return Err(mismatch(kind, 1, spec.in_channels, ca));
    }
    if spec.out_channels != 0 && spec.out_channels != ca + cb {
        return Err(mismatch(kind, 1, spec.out_channels - spec.in_channels, cb));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    for n in 0..oa {
        data.extend_from_slice(&a.data()[n * ca * ia..(n + 1) * ca * ia]);
        data.extend_from_slice(&b.data()[n * cb * ib..(n + 1) * cb * ib]);
    }
    let mut shape = a.shape().to_vec();
    shape[1] = ca + cb;
    Tensor::new(shape, data)
}

fn split_channels(
    g: &Tensor,
    a_shape: &[usize],
    b_shape: &[usize],
) -> Result<(Tensor, Tensor), TensorError> {
    let outer = a_shape[0];
    let inner: usize = a_shape[2..].iter().product();
    let (ca, cb) = (a_shape[1], b_shape[1]);
    let mut ga = Vec::with_capacity(outer * ca * inner);
    let mut gb = Vec::with_capacity(outer * cb * inner);
    let stride = (ca + cb) * inner;
    for n in 0..outer {
        let chunk = &g.data()[n * stride..(n + 1) * stride];
        ga.extend_from_slice(&chunk[..ca * inner]);
        gb.extend_from_slice(&chunk[ca * inner..]);
    }
    Ok((
        Tensor::new(a_shape.to_vec(), ga)?,
        Tensor::new(b_shape.to_vec(), gb)?,
    ))
}

fn product_forward(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    let kind = LayerKind::ElementwiseProduct;
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        return Tensor::new(a.shape().to_vec(), data);
    }
    let (oa, ca, ia) = channel_split(kind, a)?;
    let (ob, cb, ib) = channel_split(kind, b)?;
    if a.shape().len() != b.shape().len() || oa != ob || ia != ib || cb != 1 {
        same_shape(kind, a, b)?;
        return Err(mismatch(kind, 1, 1, cb));
    }
    let mut data = vec![0f32; a.len()];
    for n in 0..oa {
        let bb = &b.data()[n * ib..(n + 1) * ib];
        for c in 0..ca {
            let off = (n * ca + c) * ia;
            for i in 0..ia {
                data[off + i] = a.data()[off + i] * bb[i];
            }
        }
    }
    Tensor::new(a.shape().to_vec(), data)
}

fn product_backward(a: &Tensor, b: &Tensor, g: &Tensor) -> Result<(Tensor, Tensor), TensorError> {
    if a.shape() == b.shape() {
        let ga = g.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        let gb = g.data().iter().zip(a.data()).map(|(x, y)| x * y).collect();
        return Ok((
            Tensor::new(a.shape().to_vec(), ga)?,
            Tensor::new(b.shape().to_vec(), gb)?,
        ));
    }
    let (outer, ca, inner) = channel_split(LayerKind::ElementwiseProduct, a)?;
    let mut ga = vec![0f32; a.len()];
    let mut gb = vec![0f32; b.len()];
    for n in 0..outer {
        for c in 0..ca {
            let off = (n * ca + c) * inner;
            for i in 0..inner {
                let gv = g.data()[off + i];
                ga[off + i] = gv * b.data()[n * inner + i];
                gb[n * inner + i] += gv * a.data()[off + i];
            }
        }
    }
    Ok((
        Tensor::new(a.shape().to_vec(), ga)?,
        Tensor::new(b.shape().to_vec(), gb)?,
    ))
}
