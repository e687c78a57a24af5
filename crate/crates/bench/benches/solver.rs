//! Hot-path benchmarks: algebra primitives, residual evaluations, the
//! Newton scan on the Kepler benchmark, and reduced-equation integration.

use criterion::{black_box, criterion_group, criterion_main, Criterion};

use releq_core::dynamics::{ep_integrate, reconstruct};
use releq_core::equilibria::{
    amended_gradient_residual, ep_stationarity_residual, lewis_residual, scan_seeds, Candidate,
    ScanMode, ScanSpec,
};
use releq_core::liealg::{exp_matrix, so3, AlgebraVector, MomentumVector};
use releq_core::load_system_from_str;
use releq_core::systems::SystemModel;

fn kepler() -> SystemModel {
    load_system_from_str(
        r#"{
            "kind": "simple_mechanical",
            "algebra": "so2",
            "n": 1,
            "g_ij": [["1"]],
            "g_ab": [["x1^2"]],
            "V": "-k/x1",
            "domain": {"min": [0.05], "max": [10.0]},
            "parameters": {"k": 1.0}
        }"#,
    )
    .unwrap()
}

fn rigid_body() -> SystemModel {
    load_system_from_str(
        r#"{"kind": "lie_group", "algebra": "so3", "l": "0.5*(xi1^2 + 2*xi2^2 + 3*xi3^2)"}"#,
    )
    .unwrap()
}

fn bench_liealg(c: &mut Criterion) {
    let alg = so3();
    let xi = AlgebraVector::from_slice(&[0.4, -0.7, 0.9]);
    let eta = AlgebraVector::from_slice(&[1.1, 0.2, -0.3]);
    let mu = MomentumVector::from_slice(&[0.5, 1.5, -2.0]);
    c.bench_function("bracket_so3", |b| {
        b.iter(|| alg.constants.bracket(black_box(&xi), black_box(&eta)).unwrap())
    });
    c.bench_function("isotropy_residual_so3", |b| {
        b.iter(|| {
            alg.constants
                .isotropy_residual(black_box(&xi), black_box(&mu))
                .unwrap()
        })
    });
    let hat = alg.rep.hat(&xi).unwrap();
    c.bench_function("exp_matrix_3x3", |b| {
        b.iter(|| exp_matrix(black_box(&hat)).unwrap())
    });
    let g = alg.rep.exp(&xi).unwrap();
    c.bench_function("adjoint_so3", |b| {
        b.iter(|| alg.rep.adjoint(black_box(&g), black_box(&eta)).unwrap())
    });
    c.bench_function("dexp_so3", |b| {
        b.iter(|| alg.constants.dexp(black_box(&xi), black_box(&eta)).unwrap())
    });
}

fn bench_residuals(c: &mut Criterion) {
    let kp = kepler();
    let mu = MomentumVector::from_slice(&[1.0]);
    c.bench_function("amended_gradient_kepler", |b| {
        b.iter(|| amended_gradient_residual(&kp, black_box(&[1.3]), &mu).unwrap())
    });
    c.bench_function("lewis_residual_kepler", |b| {
        let cand = Candidate::new(vec![1.3], vec![0.8]);
        b.iter(|| lewis_residual(&kp, black_box(&cand)).unwrap())
    });
    let rb = rigid_body();
    let xi = AlgebraVector::from_slice(&[0.6, -0.2, 0.9]);
    c.bench_function("ep_stationarity_rigid_body", |b| {
        b.iter(|| ep_stationarity_residual(&rb, black_box(&xi)).unwrap())
    });
}

fn bench_solver(c: &mut Criterion) {
    let kp = kepler();
    let spec = ScanSpec {
        count: 16,
        rng_seed: 1,
        ..ScanSpec::default()
    };
    c.bench_function("scan_kepler_fixed_mu_16_seeds", |b| {
        b.iter(|| scan_seeds(&kp, &ScanMode::FixedMu(vec![1.0]), black_box(&spec)).unwrap())
    });
}

fn bench_dynamics(c: &mut Criterion) {
    let rb = rigid_body();
    let xi0 = AlgebraVector::from_slice(&[1.0, 0.01, 0.0]);
    c.bench_function("ep_integrate_rigid_body_1000_steps", |b| {
        b.iter(|| ep_integrate(&rb, black_box(&xi0), 1.0, 1e-3).unwrap())
    });
    let traj = ep_integrate(&rb, &xi0, 1.0, 1e-2).unwrap();
    c.bench_function("reconstruct_rigid_body_100_steps", |b| {
        b.iter(|| reconstruct(&rb, black_box(&traj)).unwrap())
    });
}

criterion_group!(
    benches,
    bench_liealg,
    bench_residuals,
    bench_solver,
    bench_dynamics
);
criterion_main!(benches);
