use criterion::{black_box, criterion_group, criterion_main, Criterion};

use mfg_bench::coupled_model_a;
use mfg_core::fixed_point::{coupling_fields, phi_map, picard_solve};
use mfg_core::fp::{build_transport_operator, solve_fp};
use mfg_core::hjb::solve_hjb;
use mfg_core::wasserstein::{d1, GridMeasure};
use mfg_core::{CflData, DensityPath, GridSpec, InitialDensity, PicardOptions};

fn hjb_and_fp(c: &mut Criterion) {
    let (model, grid) = coupled_model_a(64, 0.5);
    let gamma = DensityPath::stationary(&grid, &model.m0.discretize(&grid).unwrap()).unwrap();
    let (f, g) = coupling_fields(&model, &grid, &gamma).unwrap();
    c.bench_function("hjb nx=64", |b| b.iter(|| solve_hjb(&model, black_box(&f), &g, &grid).unwrap()));
    let u = solve_hjb(&model, &f, &g, &grid).unwrap();
    let m0 = model.m0.discretize(&grid).unwrap();
    c.bench_function("fp nx=64", |b| {
        b.iter(|| {
            let op = build_transport_operator(black_box(&u), &model).unwrap();
            solve_fp(&op, &m0).unwrap()
        })
    });
    c.bench_function("phi map nx=64", |b| b.iter(|| phi_map(black_box(&gamma), &model, &grid).unwrap()));
}

fn picard(c: &mut Criterion) {
    let (model, grid) = coupled_model_a(32, 0.25);
    let mut group = c.benchmark_group("picard");
    group.sample_size(10);
    group.bench_function("nx=32", |b| b.iter(|| picard_solve(&model, &grid, PicardOptions::default()).unwrap()));
    group.finish();
}

fn wasserstein(c: &mut Criterion) {
    let cfl = CflData { diffusion_max: 1.0, drift_max: 1.0 };
    let grid = GridSpec::new(2, 1.0, 16, 400, 0.1, cfl).unwrap();
    let a = InitialDensity::Gaussian { center: Some([0.3, 0.4]), std: 0.1 }.discretize(&grid).unwrap();
    let b = InitialDensity::Gaussian { center: Some([0.6, 0.5]), std: 0.15 }.discretize(&grid).unwrap();
    let (a, b) = (GridMeasure::from_density(&grid, &a).unwrap(), GridMeasure::from_density(&grid, &b).unwrap());
    c.bench_function("d1 2d 16x16", |bch| bch.iter(|| d1(black_box(&a), &b).unwrap()));
}

criterion_group!(benches, hjb_and_fp, picard, wasserstein);
criterion_main!(benches);
