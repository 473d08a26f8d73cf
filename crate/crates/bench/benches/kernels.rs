use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use monou::girsanov::{log_rho_tilde, zeta};
use monou::{integrate_z, sample_ou_path, DriftSpec};
use std::hint::black_box;

fn resolvents(c: &mut Criterion) {
    let x = [1.3, -0.4, 0.8, 2.1];
    let mut group = c.benchmark_group("resolvent");
    for drift in [DriftSpec::cubic(), DriftSpec::saturating(), DriftSpec::L1Subgradient] {
        group.bench_function(BenchmarkId::from_parameter(drift.label()), |b| {
            b.iter(|| drift.resolvent(0.5, black_box(1e-2), black_box(&x)).unwrap())
        });
    }
    group.finish();
}

fn ou_sampling(c: &mut Criterion) {
    let model = monou_bench::model();
    let mut group = c.benchmark_group("ou_path");
    for n in [1_000, 10_000] {
        let grid = monou_bench::grid(n);
        group.bench_function(BenchmarkId::from_parameter(n), |b| {
            b.iter(|| sample_ou_path(&model, &grid, black_box(7)))
        });
    }
    group.finish();
}

fn integration(c: &mut Criterion) {
    let model = monou_bench::model();
    let path = monou_bench::path(&model, 10_000);
    let drift = DriftSpec::cubic();
    c.bench_function("integrate_z/cubic/10000", |b| {
        b.iter(|| integrate_z(&model, &drift, black_box(1e-2), &path, path.x_start(), None).unwrap())
    });
    let sol = integrate_z(&model, &drift, 1e-2, &path, path.x_start(), None).unwrap();
    c.bench_function("zeta/cubic/10000", |b| {
        b.iter(|| zeta(&model, &drift, black_box(1e-2), &path, path.grid().n_steps()).unwrap())
    });
    c.bench_function("log_rho_tilde/cubic/10000", |b| {
        b.iter(|| log_rho_tilde(&model, &drift, black_box(&sol), &path).unwrap())
    });
}

criterion_group!(benches, resolvents, ou_sampling, integration);
criterion_main!(benches);
