//! System model variants and the scalar/tensor quantities defined on them:
//! momentum, energy, Routhian, locked Lagrangian, locked inertia, amended
//! and augmented potentials, Hessian blocks, and connection curvature.
//!
//! States store the body velocity `w = Ad_{g^{-1}}(spatial v^a)`, so an
//! invariant Lagrangian is literally a g-independent function `l(x, v, w)`
//! in the product chart.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::expr::BoundExpr;
use crate::fd::{self, FdScheme};
use crate::liealg::{AlgebraBundle, AlgebraVector, MomentumVector};

/// Box constraints on the base coordinates.
#[derive(Debug, Clone)]
pub struct DomainBox {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl DomainBox {
    pub fn unbounded(n: usize) -> Self {
        DomainBox {
            min: vec![f64::NEG_INFINITY; n],
            max: vec![f64::INFINITY; n],
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.min.len()
            && x.iter()
                .zip(self.min.iter().zip(&self.max))
                .all(|(v, (lo, hi))| v.is_finite() && *v >= *lo && *v <= *hi)
    }

    pub fn is_bounded(&self) -> bool {
        self.min.iter().chain(&self.max).all(|v| v.is_finite())
    }

    /// Deterministic sample grid, `per_dim` points per coordinate, capped at
    /// 1024 points total. Unbounded coordinates sample [-1, 1].
    pub fn sample_grid(&self, per_dim: usize) -> Vec<Vec<f64>> {
        let n = self.min.len();
        if n == 0 {
            return vec![vec![]];
        }
        let per_dim = per_dim.max(1);
        let mut total: usize = 1;
        for _ in 0..n {
            total = total.saturating_mul(per_dim);
            if total > 1024 {
                total = 1024;
                break;
            }
        }
        let axis = |lo: f64, hi: f64, k: usize| -> f64 {
            let (lo, hi) = if lo.is_finite() && hi.is_finite() {
                (lo, hi)
            } else {
                (-1.0, 1.0)
            };
            if per_dim == 1 {
                0.5 * (lo + hi)
            } else {
                // keep strictly inside the box
                let t = (k as f64 + 0.5) / per_dim as f64;
                lo + t * (hi - lo)
            }
        };
        let mut out = Vec::new();
        let mut idx = vec![0usize; n];
        loop {
            out.push(
                (0..n)
                    .map(|i| axis(self.min[i], self.max[i], idx[i]))
                    .collect(),
            );
            if out.len() >= total {
                break;
            }
            let mut i = 0;
            loop {
                idx[i] += 1;
                if idx[i] < per_dim {
                    break;
                }
                idx[i] = 0;
                i += 1;
                if i == n {
                    return out;
                }
            }
        }
        out
    }
}

/// A bound scalar expression over an ordered variable slice.
#[derive(Debug, Clone)]
pub struct ScalarField {
    expr: BoundExpr,
}

impl ScalarField {
    pub fn new(expr: BoundExpr) -> Self {
        ScalarField { expr }
    }

    pub fn eval(&self, vars: &[f64]) -> Result<f64> {
        self.expr.eval(vars)
    }
}

/// A matrix of bound scalar expressions over the base coordinates.
#[derive(Debug, Clone)]
pub struct MatrixField {
    rows: usize,
    cols: usize,
    entries: Vec<BoundExpr>,
    symmetric: bool,
}

impl MatrixField {
    pub fn new(rows: usize, cols: usize, entries: Vec<BoundExpr>, symmetric: bool) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::Dimension {
                expected: rows * cols,
                got: entries.len(),
            });
        }
        Ok(MatrixField {
            rows,
            cols,
            entries,
            symmetric,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Evaluate at `x`; symmetric fields are symmetrized by averaging so the
    /// stored value equals its transpose exactly.
    pub fn eval(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                m[(i, j)] = self.entries[i * self.cols + j].eval(x)?;
            }
        }
        if self.symmetric {
            for i in 0..self.rows {
                for j in (i + 1)..self.cols {
                    let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
                    m[(i, j)] = avg;
                    m[(j, i)] = avg;
                }
            }
        }
        Ok(m)
    }

    /// Worst asymmetry of the raw entries at `x`, before symmetrization.
    pub fn asymmetry(&self, x: &[f64]) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let a = self.entries[i * self.cols + j].eval(x)?;
                let b = self.entries[j * self.cols + i].eval(x)?;
                worst = worst.max((a - b).abs());
            }
        }
        Ok(worst)
    }
}

/// Invariant Lagrangian system on a Lie group, given by the reduced
/// Lagrangian `l` on the algebra.
#[derive(Debug, Clone)]
pub struct LieGroupSystem {
    pub algebra: AlgebraBundle,
    pub l: ScalarField,
    quadratic: bool,
    /// Constant Hessian, present exactly when `l` is homogeneous quadratic.
    /// Evaluated once at the origin, where the quadratic's finite-difference
    /// Hessian is exact to rounding; momentum and inertia evaluations then
    /// avoid the FD noise floor entirely.
    hess0: Option<DMatrix<f64>>,
}

impl LieGroupSystem {
    pub fn new(algebra: AlgebraBundle, l: ScalarField) -> Self {
        let r = algebra.dim();
        let quadratic = detect_quadratic(&l, r);
        let hess0 = if quadratic {
            fd::hess_fd(|wv: &[f64]| l.eval(wv), &vec![0.0; r], FdScheme::accurate()).ok()
        } else {
            None
        };
        LieGroupSystem {
            algebra,
            l,
            quadratic,
            hess0,
        }
    }

    /// Whether `l` is homogeneous quadratic (detected numerically); the
    /// stationary set is then a union of rays and solvers normalize.
    pub fn is_quadratic(&self) -> bool {
        self.quadratic
    }

    pub fn constant_hessian(&self) -> Option<&DMatrix<f64>> {
        self.hess0.as_ref()
    }
}

fn detect_quadratic(l: &ScalarField, r: usize) -> bool {
    let probes: [f64; 3] = [0.37, -0.81, 0.55];
    let at_zero = match l.eval(&vec![0.0; r]) {
        Ok(v) => v,
        Err(_) => return false,
    };
    if at_zero.abs() > 1e-12 {
        return false;
    }
    for k in 0..3 {
        let xi: Vec<f64> = (0..r)
            .map(|a| probes[(a + k) % 3] * (1.0 + 0.1 * a as f64))
            .collect();
        let twice: Vec<f64> = xi.iter().map(|v| 2.0 * v).collect();
        match (l.eval(&xi), l.eval(&twice)) {
            (Ok(v1), Ok(v2)) => {
                if (v2 - 4.0 * v1).abs() > 1e-9 * (1.0 + v1.abs()) {
                    return false;
                }
            }
            _ => return false,
        }
    }
    true
}

/// Simple mechanical system `L = T - V` with block-diagonal metric in the
/// mechanical-connection frame (`g_ia = 0` by construction).
#[derive(Debug, Clone)]
pub struct SimpleMechanicalSystem {
    pub n: usize,
    pub algebra: AlgebraBundle,
    pub g_ij: MatrixField,
    pub g_ab: MatrixField,
    /// Connection coefficients `A^a_i(x)`, r x n; zero when absent.
    pub connection: Option<MatrixField>,
    pub potential: ScalarField,
    pub domain: DomainBox,
}

/// General trivialized system `l(x, v, w)` in the product chart.
#[derive(Debug, Clone)]
pub struct TrivializedSystem {
    pub n: usize,
    pub algebra: AlgebraBundle,
    pub lagrangian: ScalarField,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemKind {
    LieGroup,
    SimpleMechanical,
    Trivialized,
}

impl std::fmt::Display for SystemKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SystemKind::LieGroup => write!(f, "lie_group"),
            SystemKind::SimpleMechanical => write!(f, "simple_mechanical"),
            SystemKind::Trivialized => write!(f, "trivialized"),
        }
    }
}

#[derive(Debug, Clone)]
enum Inner {
    LieGroup(LieGroupSystem),
    SimpleMechanical(SimpleMechanicalSystem),
    Trivialized(TrivializedSystem),
}

/// A loaded, validated system model. Immutable after load; all quantity
/// evaluations are reentrant pure functions.
#[derive(Debug, Clone)]
pub struct SystemModel {
    inner: Inner,
    scheme: FdScheme,
}

/// A point of TM in the product chart: base point `x`, group element `g`,
/// base quasi-velocities `v`, body algebra velocity `w`.
#[derive(Debug, Clone)]
pub struct TrivializedState {
    pub x: DVector<f64>,
    pub g: DMatrix<f64>,
    pub v: DVector<f64>,
    pub w: AlgebraVector,
}

impl TrivializedState {
    /// State at the identity group element.
    pub fn at_identity(sys: &SystemModel, x: &[f64], v: &[f64], w: &[f64]) -> Self {
        TrivializedState {
            x: DVector::from_column_slice(x),
            g: sys.algebra().rep.identity(),
            v: DVector::from_column_slice(v),
            w: AlgebraVector::from_slice(w),
        }
    }

    /// State with an explicit group element, checked for membership in the
    /// represented group (re-expansion residual at most 1e-8).
    pub fn with_group(
        sys: &SystemModel,
        x: &[f64],
        g: DMatrix<f64>,
        v: &[f64],
        w: &[f64],
    ) -> Result<Self> {
        let residual = sys.algebra().rep.membership_residual(&g)?;
        if residual > 1e-8 {
            return Err(Error::NotInGroup { residual });
        }
        Ok(TrivializedState {
            x: DVector::from_column_slice(x),
            g,
            v: DVector::from_column_slice(v),
            w: AlgebraVector::from_slice(w),
        })
    }
}

/// Hessian of the Lagrangian in the fiber directions, split into blocks
/// with respect to the standard basis.
#[derive(Debug, Clone)]
pub struct HessianBlocks {
    pub g_ij: DMatrix<f64>,
    pub g_ia: DMatrix<f64>,
    pub g_ab: DMatrix<f64>,
}

impl HessianBlocks {
    pub fn condition_ab(&self) -> f64 {
        condition_number(&self.g_ab)
    }

    /// Reduced Hessian `g_ij - g_ia g^{ab} g_jb` with its condition number.
    pub fn reduced(&self) -> Result<(DMatrix<f64>, f64)> {
        let n = self.g_ij.nrows();
        if n == 0 {
            return Ok((DMatrix::zeros(0, 0), 1.0));
        }
        let lu = self.g_ab.clone().lu();
        let x = lu
            .solve(&self.g_ia.transpose())
            .ok_or_else(|| Error::Singular("momentum block".into()))?;
        let mut red = &self.g_ij - &self.g_ia * x;
        // symmetrize away solver rounding
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (red[(i, j)] + red[(j, i)]);
                red[(i, j)] = avg;
                red[(j, i)] = avg;
            }
        }
        let cond = condition_number(&red);
        Ok((red, cond))
    }
}

pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let svd = m.clone().svd(false, false);
    let sv = &svd.singular_values;
    let smax = sv.iter().cloned().fold(0.0f64, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if smin <= 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

impl SystemModel {
    pub fn lie_group(sys: LieGroupSystem) -> Self {
        SystemModel {
            inner: Inner::LieGroup(sys),
            scheme: FdScheme::accurate(),
        }
    }

    pub fn simple_mechanical(sys: SimpleMechanicalSystem) -> Self {
        SystemModel {
            inner: Inner::SimpleMechanical(sys),
            scheme: FdScheme::accurate(),
        }
    }

    pub fn trivialized(sys: TrivializedSystem) -> Self {
        SystemModel {
            inner: Inner::Trivialized(sys),
            scheme: FdScheme::accurate(),
        }
    }

    pub fn kind(&self) -> SystemKind {
        match &self.inner {
            Inner::LieGroup(_) => SystemKind::LieGroup,
            Inner::SimpleMechanical(_) => SystemKind::SimpleMechanical,
            Inner::Trivialized(_) => SystemKind::Trivialized,
        }
    }

    pub fn algebra(&self) -> &AlgebraBundle {
        match &self.inner {
            Inner::LieGroup(s) => &s.algebra,
            Inner::SimpleMechanical(s) => &s.algebra,
            Inner::Trivialized(s) => &s.algebra,
        }
    }

    /// Base dimension n (zero for Lie-group systems).
    pub fn base_dim(&self) -> usize {
        match &self.inner {
            Inner::LieGroup(_) => 0,
            Inner::SimpleMechanical(s) => s.n,
            Inner::Trivialized(s) => s.n,
        }
    }

    pub fn alg_dim(&self) -> usize {
        self.algebra().dim()
    }

    pub fn as_lie_group(&self) -> Option<&LieGroupSystem> {
        match &self.inner {
            Inner::LieGroup(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_simple_mechanical(&self) -> Option<&SimpleMechanicalSystem> {
        match &self.inner {
            Inner::SimpleMechanical(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_trivialized(&self) -> Option<&TrivializedSystem> {
        match &self.inner {
            Inner::Trivialized(s) => Some(s),
            _ => None,
        }
    }

    pub fn scheme(&self) -> FdScheme {
        self.scheme
    }

    pub fn set_scheme(&mut self, scheme: FdScheme) {
        self.scheme = scheme;
    }

    pub fn domain(&self) -> Option<&DomainBox> {
        match &self.inner {
            Inner::SimpleMechanical(s) => Some(&s.domain),
            _ => None,
        }
    }

    pub fn check_domain(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.base_dim() {
            return Err(Error::Dimension {
                expected: self.base_dim(),
                got: x.len(),
            });
        }
        if let Some(d) = self.domain() {
            if !d.contains(x) {
                return Err(Error::Domain(format!("point {x:?} outside domain box")));
            }
        }
        Ok(())
    }

    /// The invariant Lagrangian in the product chart, as a function of the
    /// base point, base velocities, and body velocity.
    pub fn lagrangian(&self, x: &[f64], v: &[f64], w: &[f64]) -> Result<f64> {
        match &self.inner {
            Inner::LieGroup(s) => s.l.eval(w),
            Inner::SimpleMechanical(s) => {
                let gij = s.g_ij.eval(x)?;
                let gab = s.g_ab.eval(x)?;
                let vv = DVector::from_column_slice(v);
                let ww = DVector::from_column_slice(w);
                Ok(0.5 * vv.dot(&(&gij * &vv)) + 0.5 * ww.dot(&(&gab * &ww))
                    - s.potential.eval(x)?)
            }
            Inner::Trivialized(s) => {
                let mut vars = Vec::with_capacity(s.n + s.n + s.algebra.dim());
                vars.extend_from_slice(x);
                vars.extend_from_slice(v);
                vars.extend_from_slice(w);
                s.lagrangian.eval(&vars)
            }
        }
    }

    /// Body momentum `p_a = dl/dw^a` at the given chart data.
    pub fn body_momentum(&self, x: &[f64], v: &[f64], w: &[f64]) -> Result<MomentumVector> {
        match &self.inner {
            Inner::SimpleMechanical(s) => {
                let gab = s.g_ab.eval(x)?;
                let ww = DVector::from_column_slice(w);
                Ok(MomentumVector(gab * ww))
            }
            Inner::LieGroup(s) if s.hess0.is_some() => {
                let ww = DVector::from_column_slice(w);
                Ok(MomentumVector(s.hess0.as_ref().unwrap() * ww))
            }
            _ => {
                let x = x.to_vec();
                let v = v.to_vec();
                let g = fd::grad_fd(
                    |wv: &[f64]| self.lagrangian(&x, &v, wv),
                    w,
                    self.scheme,
                )?;
                Ok(MomentumVector(g))
            }
        }
    }

    /// Hessian of the Lagrangian in the group-velocity directions at the
    /// given chart data (the `g_ab` block), using the cached constant matrix
    /// for quadratic Lie-group systems.
    pub fn velocity_hessian(&self, x: &[f64], v: &[f64], w: &[f64]) -> Result<DMatrix<f64>> {
        match &self.inner {
            Inner::SimpleMechanical(s) => s.g_ab.eval(x),
            Inner::LieGroup(s) => match &s.hess0 {
                Some(h) => Ok(h.clone()),
                None => fd::hess_fd(|wv: &[f64]| s.l.eval(wv), w, self.scheme),
            },
            Inner::Trivialized(_) => {
                let x = x.to_vec();
                let v = v.to_vec();
                fd::hess_fd(|wv: &[f64]| self.lagrangian(&x, &v, wv), w, self.scheme)
            }
        }
    }

    /// Momentum at a state. At the identity this is the body value; away
    /// from it the conserved spatial value `Ad*_{g^{-1}} p_body` is returned.
    pub fn momentum(&self, state: &TrivializedState) -> Result<MomentumVector> {
        self.check_domain(state.x.as_slice())?;
        let body = self.body_momentum(
            state.x.as_slice(),
            state.v.as_slice(),
            state.w.0.as_slice(),
        )?;
        let rep = &self.algebra().rep;
        let is_identity = (state.g.clone() - rep.identity()).amax() < 1e-15;
        if is_identity {
            return Ok(body);
        }
        let ginv = state
            .g
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular("group element".into()))?;
        rep.coadjoint_transport(&ginv, &body)
    }

    /// Energy `E = v . dL/dv + w . dL/dw - L` in the chart.
    pub fn energy(&self, state: &TrivializedState) -> Result<f64> {
        self.check_domain(state.x.as_slice())?;
        let x = state.x.as_slice();
        let v = state.v.as_slice();
        let w = state.w.0.as_slice();
        match &self.inner {
            Inner::LieGroup(s) => {
                let p = self.body_momentum(x, v, w)?;
                Ok(state.w.0.dot(&p.0) - s.l.eval(w)?)
            }
            Inner::SimpleMechanical(s) => {
                let gij = s.g_ij.eval(x)?;
                let gab = s.g_ab.eval(x)?;
                Ok(0.5 * state.v.dot(&(&gij * &state.v))
                    + 0.5 * state.w.0.dot(&(&gab * &state.w.0))
                    + s.potential.eval(x)?)
            }
            Inner::Trivialized(_) => {
                let l = self.lagrangian(x, v, w)?;
                let xv = x.to_vec();
                let wv = w.to_vec();
                let dv = fd::grad_fd(
                    |vv: &[f64]| self.lagrangian(&xv, vv, &wv),
                    v,
                    self.scheme,
                )?;
                let p = self.body_momentum(x, v, w)?;
                Ok(state.v.dot(&dv) + state.w.0.dot(&p.0) - l)
            }
        }
    }

    /// Routhian `R = L - w . p` (body pairing; invariant under the action).
    pub fn routhian(&self, state: &TrivializedState) -> Result<f64> {
        self.check_domain(state.x.as_slice())?;
        let x = state.x.as_slice();
        let v = state.v.as_slice();
        let w = state.w.0.as_slice();
        let l = self.lagrangian(x, v, w)?;
        let p = self.body_momentum(x, v, w)?;
        Ok(l - state.w.0.dot(&p.0))
    }

    /// Locked Lagrangian `L_xi(x, g) = l(x, 0, Ad_{g^{-1}} xi)`.
    pub fn locked_lagrangian(
        &self,
        x: &[f64],
        g: &DMatrix<f64>,
        xi: &AlgebraVector,
    ) -> Result<f64> {
        self.check_domain(x)?;
        let rep = &self.algebra().rep;
        let w_locked = if (g.clone() - rep.identity()).amax() < 1e-15 {
            xi.clone()
        } else {
            let ginv = g
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::Singular("group element".into()))?;
            rep.adjoint(&ginv, xi)?
        };
        let zeros = vec![0.0; self.base_dim()];
        self.lagrangian(x, &zeros, w_locked.0.as_slice())
    }

    /// Locked inertia at the reference section (g = identity): the matrix
    /// `g_ab` of the fiber Hessian, evaluated at the locked velocity for
    /// velocity-dependent Hessians.
    pub fn locked_inertia_ref(&self, x: &[f64], xi: &AlgebraVector) -> Result<DMatrix<f64>> {
        match &self.inner {
            Inner::SimpleMechanical(s) => {
                self.check_domain(x)?;
                s.g_ab.eval(x)
            }
            Inner::LieGroup(s) => match &s.hess0 {
                Some(h) => Ok(h.clone()),
                None => fd::hess_fd(|wv: &[f64]| s.l.eval(wv), xi.0.as_slice(), self.scheme),
            },
            Inner::Trivialized(s) => {
                let zeros = vec![0.0; s.n];
                let x = x.to_vec();
                fd::hess_fd(
                    |wv: &[f64]| self.lagrangian(&x, &zeros, wv),
                    xi.0.as_slice(),
                    self.scheme,
                )
            }
        }
    }

    /// Locked inertia at `(x, g)`: `(Ad_{g^{-1}})^T I_ref (Ad_{g^{-1}})`,
    /// with the reference Hessian taken at the locked velocity
    /// `Ad_{g^{-1}} xi`.
    pub fn locked_inertia(
        &self,
        x: &[f64],
        g: &DMatrix<f64>,
        xi: &AlgebraVector,
    ) -> Result<DMatrix<f64>> {
        let rep = &self.algebra().rep;
        if (g.clone() - rep.identity()).amax() < 1e-15 {
            return self.locked_inertia_ref(x, xi);
        }
        let ginv = g
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular("group element".into()))?;
        let ad = rep.adjoint_matrix(&ginv)?;
        let w_locked = AlgebraVector(&ad * &xi.0);
        let iref = self.locked_inertia_ref(x, &w_locked)?;
        Ok(ad.transpose() * iref * ad)
    }

    /// Fiber Hessian blocks of the Lagrangian at a state.
    pub fn hessian_blocks(&self, state: &TrivializedState) -> Result<HessianBlocks> {
        self.check_domain(state.x.as_slice())?;
        let n = self.base_dim();
        let r = self.alg_dim();
        match &self.inner {
            Inner::SimpleMechanical(s) => Ok(HessianBlocks {
                g_ij: s.g_ij.eval(state.x.as_slice())?,
                g_ia: DMatrix::zeros(n, r),
                g_ab: s.g_ab.eval(state.x.as_slice())?,
            }),
            Inner::LieGroup(_) => {
                let g_ab = self.velocity_hessian(&[], &[], state.w.0.as_slice())?;
                Ok(HessianBlocks {
                    g_ij: DMatrix::zeros(0, 0),
                    g_ia: DMatrix::zeros(0, r),
                    g_ab,
                })
            }
            Inner::Trivialized(_) => {
                let x = state.x.as_slice().to_vec();
                let mut u = Vec::with_capacity(n + r);
                u.extend_from_slice(state.v.as_slice());
                u.extend_from_slice(state.w.0.as_slice());
                let full = fd::hess_fd(
                    |uv: &[f64]| self.lagrangian(&x, &uv[..n], &uv[n..]),
                    &u,
                    self.scheme,
                )?;
                Ok(HessianBlocks {
                    g_ij: full.view((0, 0), (n, n)).into_owned(),
                    g_ia: full.view((0, n), (n, r)).into_owned(),
                    g_ab: full.view((n, n), (r, r)).into_owned(),
                })
            }
        }
    }
}

impl SimpleMechanicalSystem {
    /// Amended potential `V^mu = V + 1/2 mu^T g_ab(x)^{-1} mu`.
    pub fn amended_potential(&self, x: &[f64], mu: &MomentumVector) -> Result<f64> {
        let gab = self.g_ab.eval(x)?;
        let lu = gab.lu();
        let sol = lu
            .solve(&mu.0)
            .ok_or_else(|| Error::Singular("momentum block".into()))?;
        Ok(self.potential.eval(x)? + 0.5 * mu.0.dot(&sol))
    }

    /// Augmented (effective) potential `V_xi = V - 1/2 xi^T g_ab(x) xi`.
    pub fn augmented_potential(&self, x: &[f64], xi: &AlgebraVector) -> Result<f64> {
        let gab = self.g_ab.eval(x)?;
        Ok(self.potential.eval(x)? - 0.5 * xi.0.dot(&(gab * &xi.0)))
    }

    /// Restricted Routhian `R^mu = 1/2 g_ij v^i v^j - V^mu`.
    pub fn restricted_routhian(&self, x: &[f64], v: &[f64], mu: &MomentumVector) -> Result<f64> {
        let gij = self.g_ij.eval(x)?;
        let vv = DVector::from_column_slice(v);
        Ok(0.5 * vv.dot(&(gij * &vv)) - self.amended_potential(x, mu)?)
    }

    /// The velocity `xi^a = g^{ab}(x) mu_b` locking the momentum value.
    pub fn velocity_for_momentum(&self, x: &[f64], mu: &MomentumVector) -> Result<AlgebraVector> {
        let gab = self.g_ab.eval(x)?;
        let lu = gab.lu();
        let xi = lu
            .solve(&mu.0)
            .ok_or_else(|| Error::Singular("momentum block".into()))?;
        Ok(AlgebraVector(xi))
    }

    /// Curvature of the supplied connection,
    /// `R^a_ij = d_i A^a_j - d_j A^a_i + C^a_bc A^b_i A^c_j`
    /// (finite-difference partials; the abelian case is the curl).
    pub fn curvature(&self, x: &[f64], scheme: FdScheme) -> Result<Vec<DMatrix<f64>>> {
        let conn = self
            .connection
            .as_ref()
            .ok_or_else(|| Error::Invalid("system has no connection coefficients".into()))?;
        let r = self.algebra.dim();
        let n = self.n;
        let c = &self.algebra.constants;
        let a0 = conn.eval(x)?;
        // partials[i] = d/dx^i of the whole connection matrix
        let mut partials: Vec<DMatrix<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut d = DMatrix::zeros(r, n);
            for a in 0..r {
                for j in 0..n {
                    let conn2 = conn.clone();
                    let g = fd::grad_fd(
                        |xv: &[f64]| Ok(conn2.eval(xv)?[(a, j)]),
                        x,
                        scheme,
                    )?;
                    d[(a, j)] = g[i];
                }
            }
            partials.push(d);
        }
        let mut out = Vec::with_capacity(r);
        for a in 0..r {
            let mut m = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    let mut val = partials[i][(a, j)] - partials[j][(a, i)];
                    for b in 0..r {
                        for cc in 0..r {
                            val += c.get(a, b, cc) * a0[(b, i)] * a0[(cc, j)];
                        }
                    }
                    m[(i, j)] = val;
                }
            }
            // enforce antisymmetry exactly
            for i in 0..n {
                m[(i, i)] = 0.0;
                for j in (i + 1)..n {
                    let v = 0.5 * (m[(i, j)] - m[(j, i)]);
                    m[(i, j)] = v;
                    m[(j, i)] = -v;
                }
            }
            out.push(m);
        }
        Ok(out)
    }
}
