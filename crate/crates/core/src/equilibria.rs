//! Residual functions for the three relative-equilibrium criteria, a damped
//! Newton/Gauss-Newton solver with finite-difference Jacobians, seed
//! scanning with deduplication, and cross-validation of found candidates.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fd::{self, FdScheme};
use crate::liealg::{AlgebraVector, MomentumVector};
use crate::systems::{SystemKind, SystemModel, TrivializedState};

/// A candidate relative-equilibrium point `(x, 0, xi)`; `x` is empty for
/// Lie-group systems.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Candidate {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
}

impl Candidate {
    pub fn new(x: Vec<f64>, xi: Vec<f64>) -> Self {
        Candidate { x, xi }
    }

    pub fn xi_vector(&self) -> AlgebraVector {
        AlgebraVector::from_slice(&self.xi)
    }

    pub fn state(&self, sys: &SystemModel) -> TrivializedState {
        TrivializedState::at_identity(sys, &self.x, &vec![0.0; self.x.len()], &self.xi)
    }

    fn distance(&self, other: &Candidate) -> f64 {
        let dx = self
            .x
            .iter()
            .zip(&other.x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        let dxi = self
            .xi
            .iter()
            .zip(&other.xi)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        dx.max(dxi)
    }
}

/// A candidate together with the evidence gathered about it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct REReport {
    pub candidate: Candidate,
    pub mu: Vec<f64>,
    pub energy: f64,
    /// Per-criterion residual norms at the candidate.
    pub residuals: BTreeMap<String, f64>,
    pub isotropy_ok: bool,
    pub reduced_hessian_condition: f64,
    pub converged: bool,
    pub iterations: usize,
    pub validated: bool,
    /// Set when the candidate belongs to a degenerate family of stationary
    /// points sharing the same energy.
    pub continuum: bool,
}

/// Lewis residual: the first n entries are the x-gradient of the locked
/// Lagrangian at the identity, the last r entries the isotropy residual
/// with `mu` taken as the momentum at `(x, 0, xi)`.
pub fn lewis_residual(sys: &SystemModel, cand: &Candidate) -> Result<DVector<f64>> {
    sys.check_domain(&cand.x)?;
    let n = sys.base_dim();
    let r = sys.alg_dim();
    let xi = cand.xi_vector();
    let mut out = DVector::zeros(n + r);
    if n > 0 {
        let id = sys.algebra().rep.identity();
        let grad = fd::grad_fd(
            |xv: &[f64]| sys.locked_lagrangian(xv, &id, &xi),
            &cand.x,
            sys.scheme(),
        )?;
        for i in 0..n {
            out[i] = grad[i];
        }
    }
    let mu = sys.body_momentum(&cand.x, &vec![0.0; n], &cand.xi)?;
    let iso = sys.algebra().constants.isotropy_residual(&xi, &mu)?;
    for a in 0..r {
        out[n + a] = iso.0[a];
    }
    Ok(out)
}

/// Euler-Poincare stationarity residual `res_a = C^c_ab xi^b (dl/dxi^c)`.
pub fn ep_stationarity_residual(sys: &SystemModel, xi: &AlgebraVector) -> Result<DVector<f64>> {
    if sys.as_lie_group().is_none() {
        return Err(Error::Invalid(
            "ep_stationarity_residual needs a lie_group system".into(),
        ));
    }
    let r = sys.alg_dim();
    let p = sys.body_momentum(&[], &[], xi.0.as_slice())?;
    let c = &sys.algebra().constants;
    let mut out = DVector::zeros(r);
    for a in 0..r {
        let mut acc = 0.0;
        for b in 0..r {
            for cc in 0..r {
                acc += c.get(cc, a, b) * xi.0[b] * p.0[cc];
            }
        }
        out[a] = acc;
    }
    Ok(out)
}

/// Gradient of the amended potential in the base coordinates.
pub fn amended_gradient_residual(
    sys: &SystemModel,
    x: &[f64],
    mu: &MomentumVector,
) -> Result<DVector<f64>> {
    let sm = sys.as_simple_mechanical().ok_or_else(|| {
        Error::Invalid("amended_gradient_residual needs a simple_mechanical system".into())
    })?;
    sys.check_domain(x)?;
    fd::grad_fd(
        |xv: &[f64]| sm.amended_potential(xv, mu),
        x,
        sys.scheme(),
    )
}

/// Energy criterion residual at a candidate (`v = 0`).
pub fn energy_criterion_residual(
    sys: &SystemModel,
    cand: &Candidate,
    mu: &MomentumVector,
) -> Result<DVector<f64>> {
    energy_criterion_residual_with_velocity(
        sys,
        &cand.x,
        &vec![0.0; cand.x.len()],
        &cand.xi_vector(),
        mu,
    )
}

/// Energy criterion residual.
///
/// Lie-group systems: derivative of the restricted energy along the tangent
/// directions of the momentum section, `res_b = gbar^{ac} C^d_bc mu_d
/// (d eps/d xi^a)` with `d eps/d xi^a = gbar_ae xi^e`. Simple mechanical
/// systems: the base-velocity directions (reduced Hessian acting on v,
/// forcing v = 0) concatenated with the amended-potential gradient.
pub fn energy_criterion_residual_with_velocity(
    sys: &SystemModel,
    x: &[f64],
    v: &[f64],
    xi: &AlgebraVector,
    mu: &MomentumVector,
) -> Result<DVector<f64>> {
    match sys.kind() {
        SystemKind::LieGroup => {
            let r = sys.alg_dim();
            let gbar = sys.velocity_hessian(&[], &[], xi.0.as_slice())?;
            let grad_eps = &gbar * &xi.0;
            let lu = gbar.lu();
            let y = lu
                .solve(&grad_eps)
                .ok_or_else(|| Error::Singular("velocity Hessian".into()))?;
            let c = &sys.algebra().constants;
            let mut out = DVector::zeros(r);
            for b in 0..r {
                let mut acc = 0.0;
                for cc in 0..r {
                    for d in 0..r {
                        acc += c.get(d, b, cc) * y[cc] * mu.0[d];
                    }
                }
                out[b] = acc;
            }
            Ok(out)
        }
        SystemKind::SimpleMechanical => {
            let n = sys.base_dim();
            let state = TrivializedState::at_identity(sys, x, v, xi.0.as_slice());
            let blocks = sys.hessian_blocks(&state)?;
            let (red, _) = blocks.reduced()?;
            let vv = DVector::from_column_slice(v);
            let top = red * vv;
            let grad = amended_gradient_residual(sys, x, mu)?;
            let mut out = DVector::zeros(n + grad.len());
            for i in 0..n {
                out[i] = top[i];
            }
            for i in 0..grad.len() {
                out[n + i] = grad[i];
            }
            Ok(out)
        }
        SystemKind::Trivialized => Err(Error::Invalid(
            "energy criterion realization covers lie_group and simple_mechanical systems; \
             cross-check trivialized candidates with the Lewis residual and the dynamics oracle"
                .into(),
        )),
    }
}

/// Solve `dl/dxi (xi) = Ad*_g mu` for `xi` by Newton iteration; the solution
/// traces out the momentum section as `g` ranges over the group.
pub fn xi_for_momentum(
    sys: &SystemModel,
    g: &DMatrix<f64>,
    mu: &MomentumVector,
) -> Result<AlgebraVector> {
    if sys.as_lie_group().is_none() {
        return Err(Error::Invalid("xi_for_momentum needs a lie_group system".into()));
    }
    let target = sys.algebra().rep.coadjoint_transport(g, mu)?;
    let r = sys.alg_dim();
    // linear initial guess from the Hessian at the origin
    let h0 = sys.velocity_hessian(&[], &[], &vec![0.0; r])?;
    let mut xi = h0
        .lu()
        .solve(&target.0)
        .ok_or_else(|| Error::Singular("velocity Hessian".into()))?;
    // 1e-12 at unit momentum scale; the FD-gradient noise floor grows with
    // the target magnitude
    let tol = 1e-12 * (1.0 + 10.0 * target.0.norm());
    let mut last_norm = f64::INFINITY;
    for _ in 0..60 {
        let p = sys.body_momentum(&[], &[], xi.as_slice())?;
        let f = &p.0 - &target.0;
        last_norm = f.norm();
        if last_norm <= tol {
            return Ok(AlgebraVector(xi));
        }
        let h = sys.velocity_hessian(&[], &[], xi.as_slice())?;
        let step = h
            .lu()
            .solve(&f)
            .ok_or_else(|| Error::Singular("velocity Hessian".into()))?;
        xi -= step;
    }
    Err(Error::Convergence {
        context: format!("xi_for_momentum (last iterate {:?})", xi.as_slice()),
        iterations: 60,
        residual: last_norm,
    })
}

/// Options for the damped Newton solver.
#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iterations: usize,
    pub jacobian_scheme: FdScheme,
    pub tikhonov: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-10,
            max_iterations: 100,
            // coarse enough that the O(h^2) truncation term dominates the
            // noise of the (finite-differenced) residual, keeping step
            // directions deterministic near degenerate points
            jacobian_scheme: FdScheme {
                step_scale: 1e-3,
                richardson: false,
            },
            tikhonov: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub x: DVector<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub failure: Option<String>,
}

/// Damped Newton (Gauss-Newton for overdetermined systems) with an FD
/// Jacobian, halving line search on the squared residual norm, and a
/// Tikhonov shift on singular normal equations. `valid` guards the domain:
/// the line search shrinks past invalid points.
pub fn solve_newton<F, V>(
    mut residual: F,
    seed: &DVector<f64>,
    opts: &NewtonOptions,
    valid: V,
) -> NewtonOutcome
where
    F: FnMut(&[f64]) -> Result<DVector<f64>>,
    V: Fn(&[f64]) -> bool,
{
    let mut x = seed.clone();
    if !valid(x.as_slice()) {
        return NewtonOutcome {
            x,
            residual_norm: f64::INFINITY,
            iterations: 0,
            converged: false,
            failure: Some("seed outside domain".into()),
        };
    }
    let mut f = match residual(x.as_slice()) {
        Ok(f) => f,
        Err(e) => {
            return NewtonOutcome {
                x,
                residual_norm: f64::INFINITY,
                iterations: 0,
                converged: false,
                failure: Some(format!("seed evaluation: {e}")),
            }
        }
    };
    let mut norm = f.norm();
    for iter in 0..opts.max_iterations {
        if norm <= opts.tol {
            return NewtonOutcome {
                x,
                residual_norm: norm,
                iterations: iter,
                converged: true,
                failure: None,
            };
        }
        let jac = match fd::jacobian_fd(&mut residual, x.as_slice(), opts.jacobian_scheme) {
            Ok(j) => j,
            Err(e) => {
                return NewtonOutcome {
                    x,
                    residual_norm: norm,
                    iterations: iter,
                    converged: false,
                    failure: Some(format!("jacobian: {e}")),
                }
            }
        };
        let step = match newton_step(&jac, &f, opts.tikhonov) {
            Some(s) => s,
            None => {
                return NewtonOutcome {
                    x,
                    residual_norm: norm,
                    iterations: iter,
                    converged: false,
                    failure: Some("singular jacobian".into()),
                }
            }
        };
        // backtracking halving line search on |F|^2
        let mut alpha = 1.0f64;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: DVector<f64> = &x + &step * alpha;
            if valid(trial.as_slice()) {
                if let Ok(ft) = residual(trial.as_slice()) {
                    let nt = ft.norm();
                    if nt < norm {
                        x = trial;
                        f = ft;
                        norm = nt;
                        accepted = true;
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            // the merit function can be stationary with F != 0 (Jacobian
            // annihilates F, e.g. at an inflection of a scalar residual);
            // coordinate probes give the escape the gradient cannot
            let m = x.len();
            let mut best: Option<(DVector<f64>, DVector<f64>, f64)> = None;
            for i in 0..m {
                let h = 1e-2 * x[i].abs().max(1.0);
                for sign in [-1.0, 1.0] {
                    let mut trial = x.clone();
                    trial[i] += sign * h;
                    if !valid(trial.as_slice()) {
                        continue;
                    }
                    if let Ok(ft) = residual(trial.as_slice()) {
                        let nt = ft.norm();
                        if nt < norm && best.as_ref().map(|b| nt < b.2).unwrap_or(true) {
                            best = Some((trial, ft, nt));
                        }
                    }
                }
            }
            if let Some((trial, ft, nt)) = best {
                x = trial;
                f = ft;
                norm = nt;
                accepted = true;
            }
        }
        if !accepted {
            return NewtonOutcome {
                x,
                residual_norm: norm,
                iterations: iter + 1,
                converged: norm <= opts.tol,
                failure: if norm <= opts.tol {
                    None
                } else {
                    Some("line search stalled".into())
                },
            };
        }
    }
    let converged = norm <= opts.tol;
    NewtonOutcome {
        x,
        residual_norm: norm,
        iterations: opts.max_iterations,
        converged,
        failure: if converged {
            None
        } else {
            Some("max iterations".into())
        },
    }
}

fn newton_step(jac: &DMatrix<f64>, f: &DVector<f64>, tikhonov: f64) -> Option<DVector<f64>> {
    let (k, m) = (jac.nrows(), jac.ncols());
    if k == m {
        if let Some(step) = jac.clone().lu().solve(&(-f)) {
            if step.iter().all(|v| v.is_finite()) {
                return Some(step);
            }
        }
    }
    // Gauss-Newton normal equations, with a Tikhonov shift when singular
    let jt = jac.transpose();
    let a = &jt * jac;
    let b = &jt * (-f);
    if let Some(step) = a.clone().lu().solve(&b) {
        if step.iter().all(|v| v.is_finite()) {
            return Some(step);
        }
    }
    let shifted = a + DMatrix::identity(m, m) * tikhonov;
    let step = shifted.lu().solve(&b)?;
    if step.iter().all(|v| v.is_finite()) {
        Some(step)
    } else {
        None
    }
}

/// Scan mode: fix the momentum value, fix the group velocity, or search the
/// full candidate space.
#[derive(Debug, Clone)]
pub enum ScanMode {
    FixedMu(Vec<f64>),
    FixedXi(Vec<f64>),
    Free,
}

#[derive(Debug, Clone)]
pub struct ScanSpec {
    pub count: usize,
    pub rng_seed: u64,
    pub newton: NewtonOptions,
    /// Candidates closer than this (max-norm) are merged.
    pub dedupe_tol: f64,
    /// A report validates when every applicable residual is at most
    /// `validation_factor * newton.tol`.
    pub validation_factor: f64,
}

impl Default for ScanSpec {
    fn default() -> Self {
        ScanSpec {
            count: 64,
            rng_seed: 0,
            newton: NewtonOptions::default(),
            dedupe_tol: 1e-6,
            validation_factor: 10.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScanResult {
    pub reports: Vec<REReport>,
    pub attempted: usize,
    pub failed: usize,
}

/// Run the mode's primary residual from a family of seeds, deduplicate the
/// validated candidates, and flag degenerate continua.
pub fn scan_seeds(sys: &SystemModel, mode: &ScanMode, spec: &ScanSpec) -> Result<ScanResult> {
    match mode {
        ScanMode::FixedMu(mu) => {
            expect_dim(mu.len(), sys.alg_dim())?;
            match sys.kind() {
                SystemKind::LieGroup => scan_lie_fixed_mu(sys, mu, spec),
                SystemKind::SimpleMechanical => scan_simple_fixed_mu(sys, mu, spec),
                SystemKind::Trivialized => scan_trivialized_fixed_mu(sys, mu, spec),
            }
        }
        ScanMode::FixedXi(xi) => {
            expect_dim(xi.len(), sys.alg_dim())?;
            scan_fixed_xi(sys, xi, spec)
        }
        ScanMode::Free => scan_free(sys, spec),
    }
}

fn expect_dim(got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::Dimension { expected, got });
    }
    Ok(())
}

fn base_seeds(sys: &SystemModel, spec: &ScanSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = sys.base_dim();
    let (lo, hi): (Vec<f64>, Vec<f64>) = match sys.domain() {
        Some(d) if d.is_bounded() => (d.min.clone(), d.max.clone()),
        _ => (vec![-2.0; n], vec![2.0; n]),
    };
    let mut seeds = Vec::new();
    // deterministic grid seeds guarantee coverage of narrow basins
    if n > 0 {
        let per_dim = match n {
            1 => spec.count.clamp(4, 32),
            2 => 5,
            _ => 3,
        };
        let grid = crate::systems::DomainBox {
            min: lo.clone(),
            max: hi.clone(),
        }
        .sample_grid(per_dim);
        seeds.extend(grid);
    }
    for _ in 0..spec.count {
        seeds.push(
            (0..n)
                .map(|i| rng.random_range(lo[i]..hi[i]))
                .collect::<Vec<f64>>(),
        );
    }
    seeds
}

fn unit_sphere_seed(r: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..r).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn scan_lie_fixed_mu(sys: &SystemModel, mu: &[f64], spec: &ScanSpec) -> Result<ScanResult> {
    // Sample the momentum section by moving mu along the coadjoint orbit:
    // unknowns are canonical coordinates theta of the group element.
    let r = sys.alg_dim();
    let mu0 = MomentumVector::from_slice(mu);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let mut outcomes = Vec::new();
    let mut failed = 0usize;
    let mut attempted = 0usize;
    let residual = |theta: &[f64]| -> Result<DVector<f64>> {
        let g = sys.algebra().rep.exp(&AlgebraVector::from_slice(theta))?;
        let xi = xi_for_momentum(sys, &g, &mu0)?;
        ep_stationarity_residual(sys, &xi)
    };
    let mut seeds: Vec<Vec<f64>> = vec![vec![0.0; r]];
    for _ in 0..spec.count {
        let dir = unit_sphere_seed(r, &mut rng);
        let scale = rng.random_range(0.0..1.5);
        seeds.push(dir.into_iter().map(|v| v * scale).collect());
    }
    for seed in seeds {
        attempted += 1;
        let outcome = solve_newton(
            residual,
            &DVector::from_column_slice(&seed),
            &spec.newton,
            |theta| theta.iter().all(|v| v.is_finite() && v.abs() < 10.0),
        );
        if !outcome.converged {
            failed += 1;
            continue;
        }
        let g = sys
            .algebra()
            .rep
            .exp(&AlgebraVector(outcome.x.clone_owned()))?;
        let xi = xi_for_momentum(sys, &g, &mu0)?;
        outcomes.push((
            Candidate::new(vec![], xi.0.as_slice().to_vec()),
            outcome.iterations,
        ));
    }
    finish_scan(sys, outcomes, attempted, failed, spec)
}

fn scan_simple_fixed_mu(sys: &SystemModel, mu: &[f64], spec: &ScanSpec) -> Result<ScanResult> {
    let mu0 = MomentumVector::from_slice(mu);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let seeds = base_seeds(sys, spec, &mut rng);
    let sm = sys.as_simple_mechanical().unwrap();
    let mut outcomes = Vec::new();
    let mut failed = 0usize;
    let mut attempted = 0usize;
    for seed in seeds {
        attempted += 1;
        let outcome = solve_newton(
            |xv: &[f64]| amended_gradient_residual(sys, xv, &mu0),
            &DVector::from_column_slice(&seed),
            &spec.newton,
            |xv| sys.check_domain(xv).is_ok(),
        );
        if !outcome.converged {
            failed += 1;
            continue;
        }
        let x = outcome.x.as_slice().to_vec();
        match sm.velocity_for_momentum(&x, &mu0) {
            Ok(xi) => outcomes.push((
                Candidate::new(x, xi.0.as_slice().to_vec()),
                outcome.iterations,
            )),
            Err(_) => failed += 1,
        }
    }
    finish_scan(sys, outcomes, attempted, failed, spec)
}

fn scan_trivialized_fixed_mu(sys: &SystemModel, mu: &[f64], spec: &ScanSpec) -> Result<ScanResult> {
    let n = sys.base_dim();
    let r = sys.alg_dim();
    let mu0 = MomentumVector::from_slice(mu);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let id = sys.algebra().rep.identity();
    // unknowns (x, xi); equations: locked-Lagrangian gradient in x plus the
    // momentum constraint p(x, 0, xi) = mu
    let residual = |u: &[f64]| -> Result<DVector<f64>> {
        let (x, xi) = u.split_at(n);
        let xiv = AlgebraVector::from_slice(xi);
        let grad = fd::grad_fd(
            |xv: &[f64]| sys.locked_lagrangian(xv, &id, &xiv),
            x,
            sys.scheme(),
        )?;
        let p = sys.body_momentum(x, &vec![0.0; n], xi)?;
        let mut out = DVector::zeros(n + r);
        for i in 0..n {
            out[i] = grad[i];
        }
        for a in 0..r {
            out[n + a] = p.0[a] - mu0.0[a];
        }
        Ok(out)
    };
    let mut outcomes = Vec::new();
    let mut failed = 0usize;
    let mut attempted = 0usize;
    for xseed in base_seeds(sys, spec, &mut rng) {
        attempted += 1;
        let mut seed = xseed.clone();
        seed.extend(unit_sphere_seed(r, &mut rng));
        let outcome = solve_newton(
            residual,
            &DVector::from_column_slice(&seed),
            &spec.newton,
            |u| sys.check_domain(&u[..n]).is_ok() && u.iter().all(|v| v.is_finite()),
        );
        if !outcome.converged {
            failed += 1;
            continue;
        }
        let (x, xi) = outcome.x.as_slice().split_at(n);
        outcomes.push((Candidate::new(x.to_vec(), xi.to_vec()), outcome.iterations));
    }
    finish_scan(sys, outcomes, attempted, failed, spec)
}

fn scan_fixed_xi(sys: &SystemModel, xi: &[f64], spec: &ScanSpec) -> Result<ScanResult> {
    let n = sys.base_dim();
    let xiv = AlgebraVector::from_slice(xi);
    if n == 0 {
        // nothing to solve: evaluate the criterion at the given velocity
        let res = ep_stationarity_residual(sys, &xiv)?;
        let converged = res.norm() <= spec.newton.tol * spec.validation_factor;
        let outcomes = if converged {
            vec![(Candidate::new(vec![], xi.to_vec()), 0usize)]
        } else {
            vec![]
        };
        return finish_scan(sys, outcomes, 1, usize::from(!converged), spec);
    }
    let id = sys.algebra().rep.identity();
    let residual = |xv: &[f64]| -> Result<DVector<f64>> {
        fd::grad_fd(
            |xq: &[f64]| sys.locked_lagrangian(xq, &id, &xiv),
            xv,
            sys.scheme(),
        )
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let mut outcomes = Vec::new();
    let mut failed = 0usize;
    let mut attempted = 0usize;
    for seed in base_seeds(sys, spec, &mut rng) {
        attempted += 1;
        let outcome = solve_newton(
            residual,
            &DVector::from_column_slice(&seed),
            &spec.newton,
            |xv| sys.check_domain(xv).is_ok(),
        );
        if !outcome.converged {
            failed += 1;
            continue;
        }
        outcomes.push((
            Candidate::new(outcome.x.as_slice().to_vec(), xi.to_vec()),
            outcome.iterations,
        ));
    }
    finish_scan(sys, outcomes, attempted, failed, spec)
}

fn scan_free(sys: &SystemModel, spec: &ScanSpec) -> Result<ScanResult> {
    let n = sys.base_dim();
    let r = sys.alg_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let mut outcomes = Vec::new();
    let mut failed = 0usize;
    let mut attempted = 0usize;
    match sys.kind() {
        SystemKind::LieGroup => {
            let quadratic = sys.as_lie_group().unwrap().is_quadratic();
            let residual = |u: &[f64]| -> Result<DVector<f64>> {
                let xiv = AlgebraVector::from_slice(u);
                let ep = ep_stationarity_residual(sys, &xiv)?;
                if quadratic {
                    // stationary rays: pin unit representatives
                    let mut out = DVector::zeros(r + 1);
                    for a in 0..r {
                        out[a] = ep[a];
                    }
                    let norm2: f64 = u.iter().map(|v| v * v).sum();
                    out[r] = 0.5 * (norm2 - 1.0);
                    Ok(out)
                } else {
                    Ok(ep)
                }
            };
            for _ in 0..spec.count {
                attempted += 1;
                let seed = unit_sphere_seed(r, &mut rng);
                let outcome = solve_newton(
                    residual,
                    &DVector::from_column_slice(&seed),
                    &spec.newton,
                    |u| u.iter().all(|v| v.is_finite() && v.abs() < 1e3),
                );
                if !outcome.converged {
                    failed += 1;
                    continue;
                }
                let mut xi = outcome.x.as_slice().to_vec();
                if quadratic {
                    let norm = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm > 0.0 {
                        for v in &mut xi {
                            *v /= norm;
                        }
                    }
                }
                outcomes.push((Candidate::new(vec![], xi), outcome.iterations));
            }
        }
        _ => {
            // full Lewis system in (x, xi)
            let residual = |u: &[f64]| -> Result<DVector<f64>> {
                let (x, xi) = u.split_at(n);
                lewis_residual(sys, &Candidate::new(x.to_vec(), xi.to_vec()))
            };
            for xseed in base_seeds(sys, spec, &mut rng) {
                attempted += 1;
                let mut seed = xseed.clone();
                seed.extend(unit_sphere_seed(r, &mut rng));
                let outcome = solve_newton(
                    residual,
                    &DVector::from_column_slice(&seed),
                    &spec.newton,
                    |u| sys.check_domain(&u[..n]).is_ok() && u.iter().all(|v| v.is_finite()),
                );
                if !outcome.converged {
                    failed += 1;
                    continue;
                }
                let (x, xi) = outcome.x.as_slice().split_at(n);
                outcomes.push((Candidate::new(x.to_vec(), xi.to_vec()), outcome.iterations));
            }
        }
    }
    finish_scan(sys, outcomes, attempted, failed, spec)
}

fn finish_scan(
    sys: &SystemModel,
    outcomes: Vec<(Candidate, usize)>,
    attempted: usize,
    mut failed: usize,
    spec: &ScanSpec,
) -> Result<ScanResult> {
    let mut reports: Vec<REReport> = Vec::new();
    for (cand, iterations) in outcomes {
        if reports
            .iter()
            .any(|r| r.candidate.distance(&cand) <= spec.dedupe_tol)
        {
            continue;
        }
        match build_report(sys, cand, iterations, true, spec) {
            Ok(report) if report.validated => reports.push(report),
            _ => failed += 1,
        }
    }
    // degenerate families: many distinct stationary points at one energy
    if reports.len() >= 20 {
        let mut by_energy: Vec<usize> = (0..reports.len()).collect();
        by_energy.sort_by(|&a, &b| reports[a].energy.total_cmp(&reports[b].energy));
        let energies: Vec<f64> = by_energy.iter().map(|&i| reports[i].energy).collect();
        let mut run_start = 0;
        for i in 1..=energies.len() {
            if i == energies.len() || (energies[i] - energies[run_start]).abs() > 1e-9 {
                if i - run_start >= 20 {
                    for k in run_start..i {
                        reports[by_energy[k]].continuum = true;
                    }
                }
                run_start = i;
            }
        }
    }
    Ok(ScanResult {
        reports,
        attempted,
        failed,
    })
}

/// Evaluate every applicable criterion residual at a candidate.
pub fn cross_validate(sys: &SystemModel, cand: &Candidate) -> Result<BTreeMap<String, f64>> {
    let mut map = BTreeMap::new();
    map.insert("lewis".to_string(), lewis_residual(sys, cand)?.norm());
    let mu = sys.body_momentum(cand.x.as_slice(), &vec![0.0; cand.x.len()], &cand.xi)?;
    match sys.kind() {
        SystemKind::LieGroup => {
            map.insert(
                "ep_stationarity".to_string(),
                ep_stationarity_residual(sys, &cand.xi_vector())?.norm(),
            );
            map.insert(
                "energy_criterion".to_string(),
                energy_criterion_residual(sys, cand, &mu)?.norm(),
            );
        }
        SystemKind::SimpleMechanical => {
            map.insert(
                "amended_gradient".to_string(),
                amended_gradient_residual(sys, &cand.x, &mu)?.norm(),
            );
            map.insert(
                "energy_criterion".to_string(),
                energy_criterion_residual(sys, cand, &mu)?.norm(),
            );
        }
        SystemKind::Trivialized => {}
    }
    Ok(map)
}

fn build_report(
    sys: &SystemModel,
    cand: Candidate,
    iterations: usize,
    converged: bool,
    spec: &ScanSpec,
) -> Result<REReport> {
    let residuals = cross_validate(sys, &cand)?;
    let vtol = spec.newton.tol * spec.validation_factor;
    let mu = sys.body_momentum(&cand.x, &vec![0.0; cand.x.len()], &cand.xi)?;
    let iso = sys
        .algebra()
        .constants
        .isotropy_residual(&cand.xi_vector(), &mu)?;
    let isotropy_ok = iso.norm() <= vtol;
    let state = cand.state(sys);
    let energy = sys.energy(&state)?;
    let blocks = sys.hessian_blocks(&state)?;
    let reduced_hessian_condition = if sys.base_dim() > 0 {
        blocks.reduced()?.1
    } else {
        blocks.condition_ab()
    };
    let validated = converged && isotropy_ok && residuals.values().all(|v| *v <= vtol);
    Ok(REReport {
        candidate: cand,
        mu: mu.0.as_slice().to_vec(),
        energy,
        residuals,
        isotropy_ok,
        reduced_hessian_condition,
        converged,
        iterations,
        validated,
        continuum: false,
    })
}

/// Build a full report for an externally supplied candidate (used by the
/// CLI verify/saari paths and by tests).
pub fn report_for_candidate(sys: &SystemModel, cand: Candidate) -> Result<REReport> {
    build_report(sys, cand, 0, true, &ScanSpec::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::load_system_from_str;
    use approx::assert_abs_diff_eq;

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
            r#"{
                "kind": "lie_group",
                "algebra": "so3",
                "l": "0.5*(xi1^2 + 2*xi2^2 + 3*xi3^2)"
            }"#,
        )
        .unwrap()
    }

    fn isotropic_body() -> SystemModel {
        load_system_from_str(
            r#"{
                "kind": "lie_group",
                "algebra": "so3",
                "l": "0.5*(xi1^2 + xi2^2 + xi3^2)"
            }"#,
        )
        .unwrap()
    }

    fn pendulum() -> SystemModel {
        load_system_from_str(
            r#"{
                "kind": "simple_mechanical",
                "algebra": "so2",
                "n": 1,
                "g_ij": [["1"]],
                "g_ab": [["sin(x1)^2"]],
                "V": "-cos(x1)",
                "domain": {"min": [0.1], "max": [3.04159265]},
                "parameters": {}
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn lewis_residual_on_circular_orbit() {
        let sys = kepler();
        let res = lewis_residual(&sys, &Candidate::new(vec![1.0], vec![1.0])).unwrap();
        assert!(res.norm() < 1e-9, "norm = {}", res.norm());
    }

    #[test]
    fn lewis_residual_on_principal_axis() {
        let sys = rigid_body();
        let res = lewis_residual(&sys, &Candidate::new(vec![], vec![0.0, 0.0, 1.0])).unwrap();
        assert!(res.norm() < 1e-10);
    }

    #[test]
    fn lewis_residual_off_axis_isotropy_norm() {
        let sys = rigid_body();
        let s = 1.0 / 2.0f64.sqrt();
        let res = lewis_residual(&sys, &Candidate::new(vec![], vec![s, s, 0.0])).unwrap();
        assert_abs_diff_eq!(res.norm(), 0.5, epsilon = 1e-9);
    }

    #[test]
    fn ep_residual_principal_axis_and_pattern() {
        let sys = rigid_body();
        let res =
            ep_stationarity_residual(&sys, &AlgebraVector::from_slice(&[0.0, 1.0, 0.0])).unwrap();
        assert!(res.norm() < 1e-10);

        // xi = (1,1,0): residual equals xi x (I xi) = (0, 0, 1)
        let res =
            ep_stationarity_residual(&sys, &AlgebraVector::from_slice(&[1.0, 1.0, 0.0])).unwrap();
        assert_abs_diff_eq!(res[0], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(res[1], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(res[2], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn ep_residual_vanishes_for_abelian() {
        let sys = load_system_from_str(
            r#"{"kind": "lie_group", "algebra": "abelian3", "l": "0.5*(xi1^2+xi2^2)+xi3^2+0.25*xi1*xi2"}"#,
        )
        .unwrap();
        for xi in [[1.0, -2.0, 0.5], [0.3, 0.3, 0.3]] {
            let res = ep_stationarity_residual(&sys, &AlgebraVector::from_slice(&xi)).unwrap();
            assert_eq!(res.norm(), 0.0);
        }
    }

    #[test]
    fn amended_gradient_values() {
        let sys = kepler();
        let mu = MomentumVector::from_slice(&[1.0]);
        let at_one = amended_gradient_residual(&sys, &[1.0], &mu).unwrap();
        assert!(at_one.norm() < 1e-9);
        let at_two = amended_gradient_residual(&sys, &[2.0], &mu).unwrap();
        assert_abs_diff_eq!(at_two[0], 0.125, epsilon = 1e-8);

        let pd = pendulum();
        let mu = MomentumVector::from_slice(&[(9.0f64 / 8.0).sqrt()]);
        let at_crit =
            amended_gradient_residual(&pd, &[std::f64::consts::FRAC_PI_3], &mu).unwrap();
        assert!(at_crit.norm() < 1e-8);
    }

    #[test]
    fn energy_criterion_collapses_to_ep_for_lie_group() {
        let sys = rigid_body();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let xi: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
            let xiv = AlgebraVector::from_slice(&xi);
            let mu = sys.body_momentum(&[], &[], &xi).unwrap();
            let cand = Candidate::new(vec![], xi.clone());
            let ec = energy_criterion_residual(&sys, &cand, &mu).unwrap();
            let ep = ep_stationarity_residual(&sys, &xiv).unwrap();
            for a in 0..3 {
                assert_abs_diff_eq!(ec[a], ep[a], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn energy_criterion_zero_at_relative_equilibria() {
        let rb = rigid_body();
        let mu = MomentumVector::from_slice(&[0.0, 0.0, 3.0]);
        let res = energy_criterion_residual(&rb, &Candidate::new(vec![], vec![0.0, 0.0, 1.0]), &mu)
            .unwrap();
        assert!(res.norm() < 1e-10);

        let kp = kepler();
        let mu = MomentumVector::from_slice(&[1.0]);
        let res =
            energy_criterion_residual(&kp, &Candidate::new(vec![1.0], vec![1.0]), &mu).unwrap();
        assert!(res.norm() < 1e-9);
    }

    #[test]
    fn xi_for_momentum_linear_case() {
        let sys = rigid_body();
        let id = sys.algebra().rep.identity();
        let xi =
            xi_for_momentum(&sys, &id, &MomentumVector::from_slice(&[0.0, 0.0, 3.0])).unwrap();
        assert_abs_diff_eq!(xi.0[2], 1.0, epsilon = 1e-10);
        let xi =
            xi_for_momentum(&sys, &id, &MomentumVector::from_slice(&[1.0, -2.0, 0.9])).unwrap();
        assert_abs_diff_eq!(xi.0[0], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(xi.0[1], -1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(xi.0[2], 0.3, epsilon = 1e-10);
    }

    #[test]
    fn xi_for_momentum_constant_on_isotropy_cosets() {
        // the defining relation dl/dxi = Ad*_g mu is unchanged under
        // g -> h g for h in the isotropy group of mu
        let sys = rigid_body();
        let mu = MomentumVector::from_slice(&[0.0, 0.0, 3.0]);
        let g = sys
            .algebra()
            .rep
            .exp(&AlgebraVector::from_slice(&[0.4, -0.7, 0.2]))
            .unwrap();
        let base = xi_for_momentum(&sys, &g, &mu).unwrap();
        for s in [0.3, 1.2, 2.5] {
            let h = sys
                .algebra()
                .rep
                .exp(&AlgebraVector::from_slice(&[0.0, 0.0, s]))
                .unwrap();
            let moved = xi_for_momentum(&sys, &(&h * &g), &mu).unwrap();
            assert!((moved.0 - &base.0).norm() < 1e-10);
        }
    }

    #[test]
    fn newton_converges_on_kepler_from_a_distance() {
        let sys = kepler();
        let mu = MomentumVector::from_slice(&[1.0]);
        let outcome = solve_newton(
            |xv: &[f64]| amended_gradient_residual(&sys, xv, &mu),
            &DVector::from_column_slice(&[1.5]),
            &NewtonOptions::default(),
            |xv| sys.check_domain(xv).is_ok(),
        );
        assert!(outcome.converged);
        assert_abs_diff_eq!(outcome.x[0], 1.0, epsilon = 1e-8);
    }

    #[test]
    fn newton_at_exact_solution_takes_no_steps() {
        let sys = kepler();
        let mu = MomentumVector::from_slice(&[1.0]);
        let outcome = solve_newton(
            |xv: &[f64]| amended_gradient_residual(&sys, xv, &mu),
            &DVector::from_column_slice(&[1.0]),
            &NewtonOptions {
                tol: 1e-8,
                ..NewtonOptions::default()
            },
            |xv| sys.check_domain(xv).is_ok(),
        );
        assert!(outcome.converged);
        assert_eq!(outcome.iterations, 0);
    }

    #[test]
    fn newton_converges_near_principal_axis() {
        let sys = rigid_body();
        let residual = |u: &[f64]| -> Result<DVector<f64>> {
            let ep = ep_stationarity_residual(&sys, &AlgebraVector::from_slice(u))?;
            let mut out = DVector::zeros(4);
            for a in 0..3 {
                out[a] = ep[a];
            }
            out[3] = 0.5 * (u.iter().map(|v| v * v).sum::<f64>() - 1.0);
            Ok(out)
        };
        let outcome = solve_newton(
            residual,
            &DVector::from_column_slice(&[0.1, -0.05, 0.95]),
            &NewtonOptions::default(),
            |_| true,
        );
        assert!(outcome.converged);
        assert_abs_diff_eq!(outcome.x[0], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(outcome.x[1], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(outcome.x[2].abs(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn free_scan_finds_the_six_principal_axes() {
        let sys = rigid_body();
        let spec = ScanSpec {
            count: 200,
            rng_seed: 7,
            ..ScanSpec::default()
        };
        let result = scan_seeds(&sys, &ScanMode::Free, &spec).unwrap();
        assert_eq!(result.reports.len(), 6);
        for report in &result.reports {
            let xi = &report.candidate.xi;
            let mut biggest = 0usize;
            for a in 1..3 {
                if xi[a].abs() > xi[biggest].abs() {
                    biggest = a;
                }
            }
            assert_abs_diff_eq!(xi[biggest].abs(), 1.0, epsilon = 1e-8);
            for a in 0..3 {
                if a != biggest {
                    assert_abs_diff_eq!(xi[a], 0.0, epsilon = 1e-8);
                }
            }
            assert!(report.validated);
        }
    }

    #[test]
    fn isotropic_scan_reports_a_continuum() {
        let sys = isotropic_body();
        let spec = ScanSpec {
            count: 60,
            rng_seed: 3,
            ..ScanSpec::default()
        };
        let result = scan_seeds(&sys, &ScanMode::Free, &spec).unwrap();
        assert!(result.reports.len() >= 20);
        assert!(result.reports.iter().all(|r| r.continuum));
        assert!(result.reports.iter().all(|r| r.validated));
    }

    #[test]
    fn kepler_fixed_mu_scan_finds_unique_orbit() {
        let sys = kepler();
        let spec = ScanSpec {
            count: 24,
            rng_seed: 5,
            ..ScanSpec::default()
        };
        let result = scan_seeds(&sys, &ScanMode::FixedMu(vec![1.0]), &spec).unwrap();
        assert_eq!(result.reports.len(), 1);
        let report = &result.reports[0];
        assert_abs_diff_eq!(report.candidate.x[0], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(report.candidate.xi[0], 1.0, epsilon = 1e-8);
        assert!(report.validated);
    }

    #[test]
    fn fixed_xi_scan_on_rigid_body() {
        let sys = rigid_body();
        let result = scan_seeds(
            &sys,
            &ScanMode::FixedXi(vec![0.0, 0.0, 1.0]),
            &ScanSpec::default(),
        )
        .unwrap();
        assert_eq!(result.reports.len(), 1);
        let report = &result.reports[0];
        assert_abs_diff_eq!(report.mu[2], 3.0, epsilon = 1e-9);
        assert!(report.validated);
    }

    #[test]
    fn lie_fixed_mu_scan_lands_on_the_momentum_sphere() {
        let sys = rigid_body();
        let spec = ScanSpec {
            count: 24,
            rng_seed: 2,
            ..ScanSpec::default()
        };
        let result = scan_seeds(&sys, &ScanMode::FixedMu(vec![0.0, 0.0, 3.0]), &spec).unwrap();
        assert!(!result.reports.is_empty());
        for report in &result.reports {
            // every representative keeps |mu| = 3 and is stationary
            let norm: f64 = report.mu.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert_abs_diff_eq!(norm, 3.0, epsilon = 1e-7);
            assert!(report.validated);
        }
    }

    #[test]
    fn cross_validation_rejects_perturbed_candidate() {
        let sys = kepler();
        let good = cross_validate(&sys, &Candidate::new(vec![1.0], vec![1.0])).unwrap();
        assert!(good.values().all(|v| *v <= 1e-9));
        let bad = cross_validate(&sys, &Candidate::new(vec![1.01], vec![1.0])).unwrap();
        assert!(bad["amended_gradient"] > 1e-3);
    }

    #[test]
    fn abelian_candidates_have_zero_isotropy_block() {
        let sys = kepler();
        for (x, xi) in [(0.7, 2.0), (1.9, -0.4), (4.0, 0.3)] {
            let res = lewis_residual(&sys, &Candidate::new(vec![x], vec![xi])).unwrap();
            assert_eq!(res[1], 0.0);
        }
    }

    #[test]
    fn scan_is_deterministic() {
        let sys = rigid_body();
        let spec = ScanSpec {
            count: 50,
            rng_seed: 42,
            ..ScanSpec::default()
        };
        let a = scan_seeds(&sys, &ScanMode::Free, &spec).unwrap();
        let b = scan_seeds(&sys, &ScanMode::Free, &spec).unwrap();
        let ja = serde_json::to_string(&a.reports).unwrap();
        let jb = serde_json::to_string(&b.reports).unwrap();
        assert_eq!(ja, jb);
    }

    #[test]
    fn pendulum_fixed_mu_and_momentum_roundtrip() {
        // x validates at momentum mu iff xi = g^{ab} mu_b reproduces mu
        let sys = pendulum();
        let sm = sys.as_simple_mechanical().unwrap();
        let mu = MomentumVector::from_slice(&[(9.0f64 / 8.0).sqrt()]);
        let spec = ScanSpec::default();
        let result = scan_seeds(&sys, &ScanMode::FixedMu(vec![mu.0[0]]), &spec).unwrap();
        assert_eq!(result.reports.len(), 1);
        let rep = &result.reports[0];
        assert_abs_diff_eq!(
            rep.candidate.x[0],
            std::f64::consts::FRAC_PI_3,
            epsilon = 1e-8
        );
        assert_abs_diff_eq!(rep.candidate.xi[0], 2.0f64.sqrt(), epsilon = 1e-8);
        let back = sm.g_ab.eval(&rep.candidate.x).unwrap()[(0, 0)] * rep.candidate.xi[0];
        assert_abs_diff_eq!(back, mu.0[0], epsilon = 1e-10);
    }
}
