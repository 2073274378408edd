use criterion::{black_box, criterion_group, criterion_main, Criterion};
use endospec::dataset::default_wavelengths;
use endospec::geometry::{estimate_essential, generate_scene, RansacConfig, SceneConfig};
use endospec::models::{build_model1, model1_predict, ArchConfig};
use endospec::tensorcore::{backward, forward, LayerParams, LayerSpec};
use endospec_bench::{rgb, tensor};

fn conv(c: &mut Criterion) {
    let spec = LayerSpec::conv2d(48, 24, 5, 1, 2);
    let params = LayerParams {
        weight: spec.weight_shape().map(|s| tensor(&s)),
        bias: spec.bias_shape().map(|s| tensor(&s)),
    };
    let x = tensor(&[1, 48, 32, 32]);
    c.bench_function("conv2d 48->24 k5 32x32 forward", |b| {
        b.iter(|| forward(&spec, &[black_box(&x)], &params).unwrap())
    });
    let (out, cache) = forward(&spec, &[&x], &params).unwrap();
    let g = tensor(out.shape());
    c.bench_function("conv2d 48->24 k5 32x32 backward", |b| {
        b.iter(|| backward(&spec, black_box(&g), &cache).unwrap())
    });

    let t = LayerSpec::tconv1d(32, 32, 4, 2, 1);
    let tp = LayerParams {
        weight: t.weight_shape().map(|s| tensor(&s)),
        bias: t.bias_shape().map(|s| tensor(&s)),
    };
    let tx = tensor(&[1024, 32, 12]);
    c.bench_function("tconv1d 32->32 k4 s2 1024 pixels", |b| {
        b.iter(|| forward(&t, &[black_box(&tx)], &tp).unwrap())
    });
}

fn predict(c: &mut Criterion) {
    let arch = ArchConfig::for_bands(3, default_wavelengths(), 32).unwrap();
    let params = build_model1(&arch, 0).unwrap();
    let image = rgb(64, 64);
    c.bench_function("model1 predict 64x64", |b| b.iter(|| model1_predict(&params, black_box(&image)).unwrap()));
}

fn ransac(c: &mut Criterion) {
    let cfg = SceneConfig {
        outlier_fraction: 0.3,
        noise_px: 0.2,
        ..Default::default()
    };
    let scene = generate_scene(&cfg).unwrap();
    c.bench_function("essential ransac 200 pairs 30% outliers", |b| {
        b.iter(|| estimate_essential(black_box(&scene.correspondences), &cfg.camera, &RansacConfig::default()).unwrap())
    });
}

criterion_group!(benches, conv, predict, ransac);
criterion_main!(benches);
