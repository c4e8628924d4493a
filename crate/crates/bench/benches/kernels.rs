use std::hint::black_box;

use attnforge_core::analysis::stats;
use attnforge_core::attention::suite::build_case;
use attnforge_core::autodiff::record;
use attnforge_core::backbones::{forward, init_weights};
use attnforge_core::tensor::{self, Conv2dParams};
use attnforge_core::{build_preset, AttentionConfig, Differentiable, Eager, InitScheme, Preset, Tensor};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn randn(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape.to_vec(), 1.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d");
    let x = randn(&[1, 64, 56, 56], 1);
    for (label, w, p) in [
        ("3x3", randn(&[64, 64, 3, 3], 2), Conv2dParams::default().padding(1)),
        ("3x3_g4", randn(&[64, 16, 3, 3], 3), Conv2dParams::default().padding(1).groups(4)),
        ("1x1", randn(&[256, 64, 1, 1], 4), Conv2dParams::default()),
        ("7x7_s2", randn(&[64, 64, 7, 7], 5), Conv2dParams::default().padding(3).stride(2)),
    ] {
        group.bench_function(label, |b| b.iter(|| tensor::conv2d(black_box(&x), &w, None, &p).unwrap()));
    }
    let dy = randn(&[1, 64, 56, 56], 6);
    let w = randn(&[64, 64, 3, 3], 2);
    let p = Conv2dParams::default().padding(1);
    group.bench_function("3x3_backward", |b| {
        b.iter(|| tensor::conv2d_backward(black_box(&x), &w, &dy, &p).unwrap())
    });
    group.finish();
}

fn attention(c: &mut Criterion) {
    let mut group = c.benchmark_group("attention");
    let shape = [1, 64, 28, 28];
    for cfg in [
        AttentionConfig::gam(4),
        AttentionConfig::gam(4).with_groups(4),
        AttentionConfig::se(16),
        AttentionConfig::cbam(16),
        AttentionConfig::bam(16),
    ] {
        let case = build_case(&cfg, shape, 0).unwrap();
        group.bench_with_input(BenchmarkId::new("forward", cfg.label()), &case, |b, case| {
            b.iter(|| case.func.eval(&mut Eager, black_box(&case.inputs)).unwrap())
        });
        let seed = Tensor::ones(shape.to_vec()).unwrap();
        group.bench_with_input(BenchmarkId::new("forward_backward", cfg.label()), &case, |b, case| {
            b.iter(|| record(&case.func, black_box(&case.inputs)).unwrap().input_grads(&seed).unwrap())
        });
    }
    group.finish();
}

fn networks(c: &mut Criterion) {
    let mut group = c.benchmark_group("network");
    group.sample_size(10);
    for p in Preset::ALL {
        let gam = AttentionConfig::gam(p.default_gam_reduction());
        let (_, policy) = p.default_attention(attnforge_core::Mechanism::Gam);
        let spec = build_preset(p, Some(&gam), &policy).unwrap();
        group.bench_function(BenchmarkId::new("stats", p.name()), |b| b.iter(|| stats(black_box(&spec)).unwrap()));
    }
    let spec = build_preset(Preset::Resnet50Cifar, None, &attnforge_core::InsertionPolicy::none()).unwrap();
    let net = init_weights(&spec, 0, InitScheme::KaimingNormal).unwrap();
    let x = randn(&[1, 3, 32, 32], 9);
    group.bench_function("forward/resnet50_cifar", |b| b.iter(|| forward(&net, black_box(&x)).unwrap()));
    group.finish();
}

criterion_group!(benches, conv, attention, networks);
criterion_main!(benches);
