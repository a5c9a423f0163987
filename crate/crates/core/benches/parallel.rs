use candle_core::DType;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use hrssr::controller::{monte_carlo_mean, FinetuneRule, Stage};
use hrssr::degrade::{apply_recipe, sample_recipe};
use hrssr::evalbench::metric_row;
use hrssr::metrics::Perceptual;
use hrssr::par::{try_map_indexed, Exec};
use hrssr::toy::toy_set;

const POLICIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn bench_toy(c: &mut Criterion) {
    let mut g = c.benchmark_group("toy_set_16x64");
    for (name, exec) in POLICIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| toy_set(16, 64, 1, exec).unwrap())
        });
    }
    g.finish();
}

fn bench_degrade(c: &mut Criterion) {
    let images = toy_set(16, 64, 2, Exec::Sequential).unwrap();
    let mut g = c.benchmark_group("degrade_16x64");
    g.sample_size(20);
    for (name, exec) in POLICIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                try_map_indexed(exec, images.len(), |i| {
                    apply_recipe(&images[i], &sample_recipe(i as u64, 4)?)
                })
                .unwrap()
            })
        });
    }
    g.finish();
}

fn bench_metrics(c: &mut Criterion) {
    let a = toy_set(8, 64, 3, Exec::Sequential).unwrap();
    let b = toy_set(8, 64, 4, Exec::Sequential).unwrap();
    let p = Perceptual::fallback(DType::F32).unwrap();
    let mut g = c.benchmark_group("metrics_8x64");
    g.sample_size(20);
    for (name, exec) in POLICIES {
        g.bench_function(BenchmarkId::from_parameter(name), |bch| {
            bch.iter(|| try_map_indexed(exec, a.len(), |i| metric_row("x", &a[i], &b[i], &p)).unwrap())
        });
    }
    g.finish();
}

fn bench_controller(c: &mut Criterion) {
    let mut g = c.benchmark_group("controller_mc_1e5");
    g.sample_size(10);
    for (name, exec) in POLICIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| monte_carlo_mean(Stage::Pretrain, FinetuneRule::Hqi, 0.3, 16, 100_000, 7, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_toy, bench_degrade, bench_metrics, bench_controller);
criterion_main!(benches);
