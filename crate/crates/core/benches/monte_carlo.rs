use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use rrt_gard::bench::runner::{run_monte_carlo, Cell, Grid, Method, MethodConfig, RunOptions, SigmaChoice};
use rrt_gard::bench::synthetic::{NoiseLevel, OutlierModel, SyntheticSpec};
use rrt_gard::bench::theorem::{validate_theorem2, Theorem2Config};

fn small_grid() -> Grid {
    Grid {
        name: "bench".into(),
        x_label: "k_g".into(),
        cells: [10usize, 40]
            .iter()
            .map(|&k| Cell {
                x: k as f64,
                spec: SyntheticSpec::new(200, 10, k, OutlierModel::Model1, NoiseLevel::Variance(1.0)),
            })
            .collect(),
        methods: vec![
            MethodConfig::new(Method::RrtGard { alpha: 0.1 }),
            MethodConfig::new(Method::Gard).with_sigma(SigmaChoice::Scheme1),
            MethodConfig::new(Method::MEst),
        ],
    }
}

fn monte_carlo(c: &mut Criterion) {
    let grid = small_grid();
    let mut group = c.benchmark_group("monte_carlo");
    group.sample_size(10);
    for (label, workers) in [("sequential", Some(1)), ("parallel", None)] {
        group.bench_with_input(BenchmarkId::new("grid", label), &workers, |b, &workers| {
            b.iter(|| run_monte_carlo(&grid, RunOptions { trials: 32, seed: 1, workers }).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("threshold-bound", label), &workers, |b, &workers| {
            let cfg = Theorem2Config {
                trials: 200,
                workers,
                ..Theorem2Config::default()
            };
            b.iter(|| validate_theorem2(&cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, monte_carlo);
criterion_main!(benches);
