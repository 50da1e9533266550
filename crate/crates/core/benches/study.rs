//! Benchmarks for the replicate pipeline and the study harness, comparing
//! sequential (workers = 1) against the rayon pool (workers = all cores).
//!
//! With `--no-default-features` the crate always runs sequentially and only
//! the sequential benches are compiled.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use slopelab_core::estimators::Method;
use slopelab_core::mcstudy::{run_replicate, run_study, StudyConfig};
use slopelab_core::simgen::{generate, GenConfig};
use slopelab_core::trajectories::Setting;

fn bench_generate(c: &mut Criterion) {
    c.bench_function("generate_s1_200_per_arm", |b| {
        let cfg = GenConfig::new(Setting::S1, 200, 7);
        b.iter(|| generate(black_box(&cfg)).unwrap());
    });
}

fn bench_replicate_per_method(c: &mut Criterion) {
    let config = StudyConfig::default();
    let mut group = c.benchmark_group("replicate_s1");
    for method in Method::ALL {
        group.bench_with_input(
            BenchmarkId::from_parameter(method),
            &method,
            |b, &method| {
                b.iter(|| {
                    run_replicate(Setting::S1, &[method], black_box(&config), 12345)
                });
            },
        );
    }
    group.finish();
}

fn bench_study_workers(c: &mut Criterion) {
    let base = StudyConfig {
        settings: vec![Setting::S1],
        methods: vec![Method::Lm, Method::Lme, Method::TwoStage],
        n_per_arm: 50,
        n_reps: 16,
        ..StudyConfig::default()
    };
    let mut group = c.benchmark_group("study_16_reps");
    group.sample_size(10);
    group.bench_function("sequential", |b| {
        let config = StudyConfig {
            workers: 1,
            ..base.clone()
        };
        b.iter(|| run_study(black_box(&config)).unwrap());
    });
    #[cfg(feature = "parallel")]
    group.bench_function("parallel_all_cores", |b| {
        let config = StudyConfig {
            workers: 0,
            ..base.clone()
        };
        b.iter(|| run_study(black_box(&config)).unwrap());
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_generate,
    bench_replicate_per_method,
    bench_study_workers
);
criterion_main!(benches);
