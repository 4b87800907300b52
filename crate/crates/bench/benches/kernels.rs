use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gmt_core::datagen::generate_sample;
use gmt_core::geometry::obb_intersect;
use gmt_core::metrics::frechet;
use gmt_core::pointscene::propagate_features;
use gmt_core::{Ablation, GenConfig, GmtModel, ModelConfig, OrientedBox, PointCloud, Rot6D, Vec3};
use ndarray::Array2;

/// Deterministic pseudo-random values in [-1, 1).
fn lcg(state: &mut u64) -> f64 {
    *state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (*state >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

fn points(n: usize, seed: u64) -> Vec<Vec3> {
    let mut s = seed;
    (0..n).map(|_| Vec3::new(lcg(&mut s), lcg(&mut s), lcg(&mut s))).collect()
}

fn bench_forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward");
    group.sample_size(10);
    for (name, cfg) in [("tiny", ModelConfig::tiny()), ("default", ModelConfig::default())] {
        let model = GmtModel::new(cfg.clone()).unwrap();
        let sample = generate_sample(0, 0, &GenConfig::for_model(&cfg)).unwrap();
        let prepared = model.prepare(&sample).unwrap();
        group.bench_function(name, |b| b.iter(|| model.predict_prepared(black_box(&prepared), Ablation::None).unwrap()));
    }
    group.finish();
}

fn bench_frechet(c: &mut Criterion) {
    let mut group = c.benchmark_group("frechet");
    for n in [32, 140, 512] {
        let p = points(n, 1);
        let q = points(n, 2);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| b.iter(|| frechet(black_box(&p), black_box(&q)).unwrap()));
    }
    group.finish();
}

fn bench_obb(c: &mut Criterion) {
    let a = OrientedBox::new(Vec3::zeros(), Vec3::new(0.4, 0.3, 0.2), Rot6D::from_yaw(0.3)).unwrap();
    let near = OrientedBox::new(Vec3::new(0.3, 0.1, 0.05), Vec3::new(0.5, 0.5, 0.5), Rot6D::new(Vec3::new(1.0, 0.2, 0.1), Vec3::new(0.0, 1.0, 0.3))).unwrap();
    let far = OrientedBox::axis_aligned(Vec3::new(3.0, 0.0, 0.0), Vec3::repeat(0.5)).unwrap();
    c.bench_function("obb_intersect/overlapping", |b| b.iter(|| obb_intersect(black_box(&a), black_box(&near))));
    c.bench_function("obb_intersect/separated", |b| b.iter(|| obb_intersect(black_box(&a), black_box(&far))));
}

fn bench_propagate(c: &mut Criterion) {
    let mut group = c.benchmark_group("propagate_features");
    for n in [64, 1024] {
        let pts = points(n, 3);
        let mut s = 4;
        let feats = Array2::from_shape_fn((n, 64), |_| lcg(&mut s));
        let cloud = PointCloud::with_features(pts, feats).unwrap();
        let query = Vec3::new(0.1, -0.2, 0.3);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| b.iter(|| propagate_features(black_box(&cloud), black_box(&query), 3).unwrap()));
    }
    group.finish();
}

criterion_group!(kernels, bench_forward, bench_frechet, bench_obb, bench_propagate);
criterion_main!(kernels);
