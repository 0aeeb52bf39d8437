//! End-to-end pipeline benchmarks: assembly, time stepping on the three
//! model forms, snapshot factorization, and the reduced right-hand sides.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use mqs_rom_core::integrator::{integrate_dae, integrate_ode, BdfOrder, StepControl};
use mqs_rom_core::matcore::DVec;
use mqs_rom_core::problem::{build_transformer_2d, Transformer2dConfig};
use mqs_rom_core::rom::{a1_snapshots, f1_snapshots};
use mqs_rom_core::{build_deim, build_pod, pod_basis, regularize, MqsDae, PodSpec};

fn drive(t: f64) -> DVec {
    let pi = std::f64::consts::PI;
    DVec::from_vec(vec![1.5e4 * (40.0 * pi * t).sin(), 9.0e3 * (70.0 * pi * t).sin()])
}

fn mesh(nx: usize) -> Transformer2dConfig {
    let mut cfg = Transformer2dConfig::default();
    cfg.nx = nx;
    cfg.ny = nx;
    cfg
}

fn bench_assembly(c: &mut Criterion) {
    let mut g = c.benchmark_group("assembly");
    for nx in [8usize, 16, 24] {
        let cfg = mesh(nx);
        g.bench_function(format!("transformer_{}x{}", nx, nx), |b| {
            b.iter(|| MqsDae::new(build_transformer_2d(black_box(&cfg)).unwrap()).unwrap())
        });
    }
    let dae = MqsDae::new(build_transformer_2d(&mesh(16)).unwrap()).unwrap();
    let a = DVec::from_element(dae.n(), 0.05);
    g.bench_function("stiffness_update_16x16", |b| {
        b.iter(|| dae.assemble_k(black_box(&a)).unwrap())
    });
    g.finish();
}

fn bench_integration(c: &mut Criterion) {
    let mut g = c.benchmark_group("integrate");
    g.sample_size(20);
    let dae = MqsDae::new(build_transformer_2d(&mesh(8)).unwrap()).unwrap();
    let reg = regularize(MqsDae::new(build_transformer_2d(&mesh(8)).unwrap()).unwrap()).unwrap();
    let ode = reg.to_ode().unwrap();
    let ctl = StepControl::new(1.25e-3, 0.0125, BdfOrder::One);
    g.bench_function("full_dae_8x8_10steps", |b| {
        b.iter(|| integrate_dae(&dae, &DVec::zeros(dae.n_state()), black_box(&ctl), drive).unwrap())
    });
    g.bench_function("regularized_8x8_10steps", |b| {
        b.iter(|| integrate_ode(&reg, &DVec::zeros(reg.n_r()), black_box(&ctl), drive).unwrap())
    });
    g.bench_function("schur_ode_8x8_10steps", |b| {
        b.iter(|| integrate_ode(&ode, &DVec::zeros(ode.n_ode()), black_box(&ctl), drive).unwrap())
    });
    g.finish();
}

fn bench_reduction(c: &mut Criterion) {
    let mut g = c.benchmark_group("reduce");
    g.sample_size(30);
    let reg = regularize(MqsDae::new(build_transformer_2d(&mesh(16)).unwrap()).unwrap()).unwrap();
    let ode = reg.to_ode().unwrap();
    let ctl = StepControl::new(1.25e-4, 0.01, BdfOrder::One);
    let traj = integrate_ode(&ode, &DVec::zeros(ode.n_ode()), &ctl, drive).unwrap();
    let xa1 = a1_snapshots(&ode, &traj);
    let xf1 = f1_snapshots(&ode, &traj);
    g.bench_function("snapshot_svd_16x16_80steps", |b| {
        b.iter(|| pod_basis(black_box(&xa1), PodSpec::EnergyTol(1e-7)).unwrap())
    });
    let basis = pod_basis(&xa1, PodSpec::EnergyTol(1e-7)).unwrap();
    g.bench_function("projected_model_build", |b| {
        b.iter(|| build_pod(&ode, black_box(basis.u.clone())).unwrap())
    });
    let rom = build_pod(&ode, basis.u.clone()).unwrap();
    g.bench_function("interpolant_build_ell4", |b| {
        b.iter(|| build_deim(&rom, black_box(&xf1), 4).unwrap())
    });
    g.finish();
}

fn bench_reduced_rhs(c: &mut Criterion) {
    let mut g = c.benchmark_group("reduced_rhs");
    let reg = regularize(MqsDae::new(build_transformer_2d(&mesh(16)).unwrap()).unwrap()).unwrap();
    let ode = reg.to_ode().unwrap();
    let ctl = StepControl::new(1.25e-4, 0.01, BdfOrder::One);
    let traj = integrate_ode(&ode, &DVec::zeros(ode.n_ode()), &ctl, drive).unwrap();
    let xa1 = a1_snapshots(&ode, &traj);
    let xf1 = f1_snapshots(&ode, &traj);
    let basis = pod_basis(&xa1, PodSpec::EnergyTol(1e-7)).unwrap();
    let rom = build_pod(&ode, basis.u.clone()).unwrap();
    let deim = build_deim(&rom, &xf1, 4).unwrap();
    let x = DVec::from_element(rom.dim(), 0.01);
    let u = drive(5e-3);
    // Galerkin assembles the full saturation force and projects it; the
    // interpolated model touches only the sampled rows.
    g.bench_function("galerkin_full_force", |b| {
        b.iter(|| rom.rhs_galerkin(black_box(&x), black_box(&u)).unwrap())
    });
    let a1_hat = x.rows(0, rom.r()).into_owned();
    g.bench_function("interpolated_force_ell4", |b| {
        b.iter(|| deim.f1_hat(black_box(&a1_hat)))
    });
    g.finish();
}

criterion_group!(
    benches,
    bench_assembly,
    bench_integration,
    bench_reduction,
    bench_reduced_rhs
);
criterion_main!(benches);
