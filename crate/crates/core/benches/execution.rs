//! Sequential vs rayon-parallel execution of the per-window kernels.
//!
//! Both paths produce bitwise-identical output, so the only thing that
//! differs between the two series is wall time.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mpin::exec::Execution;
use mpin::feaprop::feaprop_impute_matrix;
use mpin::graph::{knn_graph_with, mean_fill_matrix, GraphBuilder, Metric};
use mpin::mpin::train::train_impute_matrix;
use mpin::mpin::TrainConfig;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn window(rows: usize, dim: usize, missing: f64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    Array2::from_shape_fn((rows, dim), |(i, j)| {
        if rng.random::<f64>() < missing {
            f64::NAN
        } else {
            (i as f64 * 0.01 + j as f64).sin() + 0.1 * rng.random::<f64>()
        }
    })
}

fn knn(c: &mut Criterion) {
    let mut group = c.benchmark_group("knn_graph");
    for rows in [250, 1000] {
        let filled = mean_fill_matrix(&window(rows, 37, 0.2));
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, rows), &filled, |b, x| {
                b.iter(|| knn_graph_with(exec, black_box(x), 10, Metric::Euclidean).unwrap())
            });
        }
    }
    group.finish();
}

fn feaprop(c: &mut Criterion) {
    let mut group = c.benchmark_group("feaprop");
    let values = window(1000, 37, 0.3);
    let graph = knn_graph_with(Execution::Parallel, &mean_fill_matrix(&values), 10, Metric::Euclidean).unwrap();
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| feaprop_impute_matrix(exec, black_box(&values), &graph, 50, 0.0).unwrap())
        });
    }
    group.finish();
}

fn training(c: &mut Criterion) {
    let mut group = c.benchmark_group("train_impute");
    group.sample_size(10);
    let values = window(1000, 37, 0.3);
    for (name, exec) in MODES {
        let config = TrainConfig {
            epochs: 20,
            execution: exec,
            ..TrainConfig::default()
        };
        group.bench_function(name, |b| {
            b.iter(|| train_impute_matrix(black_box(&values), &GraphBuilder::default(), &config, None).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, knn, feaprop, training);
criterion_main!(benches);
