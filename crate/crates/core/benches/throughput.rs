//! Parallel-vs-sequential throughput comparison for the two data-parallel
//! workloads: Monte Carlo trial batches and service-area map generation.
//!
//! Run with `cargo bench -p v2itrack-core`. The `*_seq` baselines execute the
//! identical code path without rayon, so the ratio is the parallel speedup.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use v2itrack_core::selection::{
    build_service_area_map, build_service_area_map_seq, GridSpec, SelectionPolicy,
};
use v2itrack_core::sim::{preset, run_monte_carlo, run_monte_carlo_seq};

fn monte_carlo(c: &mut Criterion) {
    let mut sc = preset("fig5_rsu12").expect("preset exists");
    sc.duration = 0.5;
    sc.trials = 64;

    let mut group = c.benchmark_group("monte_carlo_64x50");
    group.sample_size(10);
    group.bench_function("parallel", |b| b.iter(|| black_box(run_monte_carlo(black_box(&sc)))));
    group.bench_function("sequential", |b| {
        b.iter(|| black_box(run_monte_carlo_seq(black_box(&sc))))
    });
    group.finish();
}

fn service_map(c: &mut Criterion) {
    let sc = preset("fig5_rsu12").expect("preset exists");
    let policy = SelectionPolicy::sanr();
    let grid = GridSpec::default_for(&sc.geometry);

    let mut group = c.benchmark_group("service_map_451x63");
    group.sample_size(20);
    group.bench_function("parallel", |b| {
        b.iter(|| black_box(build_service_area_map(&policy, &grid, &sc.geometry, &sc.radio)))
    });
    group.bench_function("sequential", |b| {
        b.iter(|| black_box(build_service_area_map_seq(&policy, &grid, &sc.geometry, &sc.radio)))
    });
    group.finish();
}

criterion_group!(benches, monte_carlo, service_map);
criterion_main!(benches);
