use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use tcp_bench::{lambda, problem};
use tcp_core::{lasso_fit, ridge_trim, LassoOptions};

fn lasso(c: &mut Criterion) {
    let mut group = c.benchmark_group("lasso_fit");
    for (n, p) in [(50, 100), (100, 400), (200, 2000)] {
        let (data, _) = problem(n, p, 5, 1);
        let lam = lambda(n, p);
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("{n}x{p}")),
            &data,
            |b, d| b.iter(|| lasso_fit(black_box(d), lam, &LassoOptions::default()).unwrap()),
        );
    }
    group.finish();
}

fn ridge(c: &mut Criterion) {
    let mut group = c.benchmark_group("ridge_trim");
    for (n, p) in [(40, 60), (100, 400), (200, 2000)] {
        let (data, x_new) = problem(n, p, 5, 2);
        let alpha = 1.0 / (n as f64 + 1.0);
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("{n}x{p}")),
            &data,
            |b, d| b.iter(|| ridge_trim(black_box(d), &x_new, 1.0, alpha).unwrap()),
        );
    }
    group.finish();
}

criterion_group!(benches, lasso, ridge);
criterion_main!(benches);
