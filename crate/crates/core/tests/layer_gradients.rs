//! Central-difference checks of every layer's backward pass.

use endospec::tensorcore::{backward, forward, LayerParams, LayerSpec, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Loss = sum(out * probe), so d loss / d out = probe.
fn loss(spec: &LayerSpec, inputs: &[Tensor], params: &LayerParams, probe: &Tensor) -> f64 {
    let refs: Vec<&Tensor> = inputs.iter().collect();
    let (out, _) = forward(spec, &refs, params).unwrap();
    out.data().iter().zip(probe.data()).map(|(a, b)| *a as f64 * *b as f64).sum()
}

fn check(spec: LayerSpec, input_shapes: &[&[usize]], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Tensor> = input_shapes.iter().map(|s| random(s, &mut rng)).collect();
    let params = LayerParams {
        weight: spec.weight_shape().map(|s| random(&s, &mut rng)),
        bias: spec.bias_shape().map(|s| random(&s, &mut rng)),
    };
    let refs: Vec<&Tensor> = inputs.iter().collect();
    let (out, cache) = forward(&spec, &refs, &params).unwrap();
    let probe = random(out.shape(), &mut rng);
    let (gin, gp) = backward(&spec, &probe, &cache).unwrap();
    let eps = 1e-2f32;

    let compare = |analytic: f32, numeric: f64, what: &str| {
        let gap = (analytic as f64 - numeric).abs() / (analytic.abs() as f64).max(numeric.abs()).max(1.0);
        assert!(gap < 1e-3, "{:?} {what}: analytic {analytic} numeric {numeric}", spec.kind);
    };

    for (k, g) in gin.iter().enumerate() {
        for j in 0..inputs[k].len() {
            let x = inputs[k].data()[j];
            // finite differences are meaningless across the ReLU kink
            if spec.kind == endospec::tensorcore::LayerKind::Relu && x.abs() < 2.0 * eps {
                continue;
            }
            let mut plus = inputs.clone();
            plus[k].data_mut()[j] += eps;
            let mut minus = inputs.clone();
            minus[k].data_mut()[j] -= eps;
            let numeric = (loss(&spec, &plus, &params, &probe) - loss(&spec, &minus, &params, &probe)) / (2.0 * eps as f64);
            compare(g.data()[j], numeric, &format!("input {k}[{j}]"));
        }
    }
    for (which, analytic) in [("weight", &gp.weight), ("bias", &gp.bias)] {
        let Some(analytic) = analytic else { continue };
        for j in 0..analytic.len() {
            let bump = |d: f32| {
                let mut p = params.clone();
                let t = if which == "weight" { p.weight.as_mut() } else { p.bias.as_mut() };
                t.unwrap().data_mut()[j] += d;
                loss(&spec, &inputs, &p, &probe)
            };
            let numeric = (bump(eps) - bump(-eps)) / (2.0 * eps as f64);
            compare(analytic.data()[j], numeric, &format!("{which}[{j}]"));
        }
    }
}

#[test]
fn conv1d() {
    check(LayerSpec::conv1d(2, 3, 3, 1, 1), &[&[2, 2, 7]], 1);
    check(LayerSpec::conv1d(2, 3, 3, 2, 0), &[&[2, 2, 9]], 2);
}

#[test]
fn tconv1d() {
    check(LayerSpec::tconv1d(2, 3, 4, 2, 1), &[&[2, 2, 5]], 3);
    check(LayerSpec::tconv1d(3, 1, 3, 1, 1), &[&[1, 3, 6]], 4);
    check(LayerSpec::tconv1d(1, 2, 3, 2, 1), &[&[2, 1, 3]], 5);
}

#[test]
fn conv2d() {
    check(LayerSpec::conv2d(3, 2, 3, 1, 1), &[&[1, 3, 5, 4]], 6);
    check(LayerSpec::conv2d(2, 2, 5, 1, 2), &[&[2, 2, 6, 6]], 7);
}

#[test]
fn parameter_free_layers() {
    check(LayerSpec::relu(), &[&[2, 3, 5]], 8);
    check(LayerSpec::residual_add(), &[&[2, 3, 5], &[2, 3, 5]], 9);
    check(LayerSpec::concat(2, 3), &[&[2, 2, 4, 3], &[2, 3, 4, 3]], 10);
    check(LayerSpec::elementwise_product(), &[&[1, 3, 4, 3], &[1, 1, 4, 3]], 11);
    check(LayerSpec::elementwise_product(), &[&[1, 3, 4, 3], &[1, 3, 4, 3]], 12);
}
