use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use lvtopo_core::experiment::{generate, GenerationConfig};
use lvtopo_core::{
    fixture, recover, solve, FixtureName, LoadAssignment, RecoveryOptions, SolverOptions,
};

fn power_flow(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve");
    for name in [FixtureName::Sys6, FixtureName::Sys15, FixtureName::Sys25] {
        let t = fixture(name).topology;
        let loads =
            LoadAssignment::with_power_factor(t.leaves().into_iter().map(|l| (l, 1_500.0)), 1.0);
        group.bench_function(name.as_str(), |b| {
            b.iter(|| solve(black_box(&t), black_box(&loads), &SolverOptions::default()).unwrap())
        });
    }
    group.finish();
}

fn simulation(c: &mut Criterion) {
    let mut group = c.benchmark_group("generate");
    group.sample_size(20);
    let t = fixture(FixtureName::Sys15).topology;
    for samples in [100, 1_000] {
        let config = GenerationConfig {
            samples,
            ..GenerationConfig::default()
        };
        group.bench_with_input(BenchmarkId::new("sys15", samples), &config, |b, cfg| {
            b.iter(|| generate(&t, cfg).unwrap())
        });
    }
    group.finish();
}

fn recovery(c: &mut Criterion) {
    let mut group = c.benchmark_group("recover");
    group.sample_size(20);
    for name in [FixtureName::Sys11, FixtureName::Sys25] {
        let config = GenerationConfig {
            samples: name.reference_samples().unwrap(),
            ..GenerationConfig::default()
        };
        let (m, _) = generate(&fixture(name).topology, &config).unwrap();
        group.bench_function(name.as_str(), |b| {
            b.iter(|| recover(black_box(&m), &RecoveryOptions::default()).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, power_flow, simulation, recovery);
criterion_main!(benches);
