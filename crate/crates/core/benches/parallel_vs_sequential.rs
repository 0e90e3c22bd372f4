//! Fractional DtN assembly (one mixed solve per W hat) and the random
//! exterior sweep, on the calling thread and on the rayon pool.

use criterion::{criterion_group, criterion_main, Criterion};
use fraclab::dtn::fractional_dtn_matrix;
use fraclab::harness::config::ExperimentKind;
use fraclab::harness::presets;
use fraclab::smallness::{default_triples, random_exterior_alphas};
use fraclab::Execution;
use std::hint::black_box;

fn dtn_columns(c: &mut Criterion) {
    let cfg = presets::preset(ExperimentKind::Selftest);
    let layout = cfg.layout().unwrap();
    let metric = cfg.metric.build(&layout).unwrap();
    let mut g = c.benchmark_group("fractional_dtn");
    g.sample_size(10);
    for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        g.bench_function(name, |b| {
            b.iter(|| fractional_dtn_matrix(&layout, &metric, cfg.physics.s, 0.5, &cfg.solver, black_box(exec)).unwrap())
        });
    }
    g.finish();
}

fn exterior_sweep(c: &mut Criterion) {
    let cfg = presets::preset(ExperimentKind::Selftest);
    let layout = cfg.layout().unwrap();
    let metric = cfg.metric.build(&layout).unwrap();
    let triples = default_triples(&layout, 1.0);
    let seeds: Vec<u64> = (0..16).collect();
    let mut g = c.benchmark_group("random_exterior_alphas");
    g.sample_size(10);
    for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        g.bench_function(name, |b| {
            b.iter(|| {
                random_exterior_alphas(&layout, &metric, cfg.physics.s, &seeds, &triples, 1.0, &cfg.solver, black_box(exec)).unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, dtn_columns, exterior_sweep);
criterion_main!(benches);
