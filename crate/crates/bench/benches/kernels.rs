use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;

use pipeyield_core::montecarlo::sample_stage_delays;
use pipeyield_core::synthetic::{four_stage_area_case, inverter, uniform_pipeline};
use pipeyield_core::{
    balanced_baseline, clark_max_pair, global_optimize, max_reduce, pipeline_distribution,
    size_stage, stage_correlation_matrix, GaussianMoments, McConfig, OptimizeMode, OptimizeOptions,
    VariationSpec,
};

fn mixed() -> VariationSpec {
    VariationSpec::new(0.5, 0.25, 0.25, 0.1, 2.0).unwrap()
}

fn clark(c: &mut Criterion) {
    let a = GaussianMoments::new(10.0, 1.0).unwrap();
    let b = GaussianMoments::new(10.5, 1.5).unwrap();
    c.bench_function("clark_max_pair", |bench| {
        bench.iter(|| clark_max_pair(black_box(a), black_box(b), black_box(0.3)))
    });

    let mut group = c.benchmark_group("max_reduce");
    for n in [4usize, 16, 64] {
        let p = uniform_pipeline(n, 10, inverter(), 10.0, mixed()).unwrap();
        let (moments, corr) = (p.stage_moments(), stage_correlation_matrix(&p));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| max_reduce(black_box(&moments), black_box(&corr)))
        });
    }
    group.finish();

    let p = uniform_pipeline(12, 10, inverter(), 10.0, mixed()).unwrap();
    c.bench_function("pipeline_distribution_12x10", |bench| {
        bench.iter(|| pipeline_distribution(black_box(&p)))
    });
}

fn monte_carlo(c: &mut Criterion) {
    let mut group = c.benchmark_group("sample_stage_delays");
    group.sample_size(10);
    let samples = 100_000;
    group.throughput(Throughput::Elements(samples as u64));
    for n in [4usize, 12] {
        let p = uniform_pipeline(n, 10, inverter(), 10.0, mixed()).unwrap();
        let cfg = McConfig::new(samples, 42);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| sample_stage_delays(black_box(&p), &cfg))
        });
    }
    group.finish();
}

fn sizing(c: &mut Criterion) {
    let (p, q) = four_stage_area_case();
    let k = q.per_stage_z(p.num_stages());
    let stage = &p.stages[3];
    c.bench_function("size_stage_40_gates", |bench| {
        bench.iter(|| size_stage(black_box(stage), &p.variation, black_box(70.0), k))
    });

    let base = balanced_baseline(&p, &q).unwrap().pipeline;
    let mut group = c.benchmark_group("global_optimize");
    group.sample_size(20);
    for (name, mode) in [
        ("ensure_yield", OptimizeMode::EnsureYield),
        ("min_area", OptimizeMode::MinArea),
    ] {
        let opts = OptimizeOptions::with_mode(mode);
        group.bench_function(name, |bench| {
            bench.iter_batched(
                || base.clone(),
                |start| global_optimize(&start, &q, &opts),
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, clark, monte_carlo, sizing);
criterion_main!(benches);
