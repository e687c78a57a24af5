//! Lie-algebra and matrix-Lie-group numerics: structure constants, brackets,
//! coadjoint transport, matrix exponential, Ad, and dexp.
//!
//! Index convention: the structure constants are stored as `C^c_ab` with
//! `[E_a, E_b] = C^c_ab E_c`, antisymmetric in the lower pair exactly as
//! stored. The isotropy condition is evaluated with free index `b`:
//! `res_b = C^c_ab xi^a mu_c`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Contravariant components `xi^a` of a Lie-algebra element in the basis `{E_a}`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgebraVector(pub DVector<f64>);

/// Covariant components `mu_a` of a momentum value in the dual basis.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumVector(pub DVector<f64>);

impl AlgebraVector {
    pub fn from_slice(x: &[f64]) -> Self {
        AlgebraVector(DVector::from_column_slice(x))
    }

    pub fn zeros(dim: usize) -> Self {
        AlgebraVector(DVector::zeros(dim))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }
}

impl MomentumVector {
    pub fn from_slice(x: &[f64]) -> Self {
        MomentumVector(DVector::from_column_slice(x))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    /// Natural pairing `<mu, xi> = mu_a xi^a`.
    pub fn pair(&self, xi: &AlgebraVector) -> f64 {
        self.0.dot(&xi.0)
    }
}

/// Structure constants `C^c_ab` of a finite-dimensional real Lie algebra.
#[derive(Debug, Clone)]
pub struct StructureConstants {
    dim: usize,
    /// Flattened as `c[(c * dim + a) * dim + b]`.
    c: Vec<f64>,
    labels: Option<Vec<String>>,
}

impl StructureConstants {
    /// Build from bracket entries `(a, b, c, value)` meaning `[E_a, E_b]`
    /// contains `value * E_c`. The antisymmetric partner is filled in, so
    /// only one orientation of each pair should be listed.
    pub fn from_brackets(dim: usize, entries: &[(usize, usize, usize, f64)]) -> Result<Self> {
        let mut c = vec![0.0; dim * dim * dim];
        for &(a, b, cc, v) in entries {
            if a >= dim || b >= dim || cc >= dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: a.max(b).max(cc) + 1,
                });
            }
            if a == b {
                return Err(Error::Invalid(
                    "bracket entry [E_a, E_a] must vanish".into(),
                ));
            }
            c[(cc * dim + a) * dim + b] = v;
            c[(cc * dim + b) * dim + a] = -v;
        }
        Ok(StructureConstants {
            dim,
            c,
            labels: None,
        })
    }

    /// Build from a dense array indexed `[a][b][c]` holding `C^c_ab`.
    /// Antisymmetry in (a, b) is required up to 1e-14 and then made exact.
    pub fn from_dense(dim: usize, dense: &[Vec<Vec<f64>>]) -> Result<Self> {
        if dense.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                got: dense.len(),
            });
        }
        let mut c = vec![0.0; dim * dim * dim];
        for a in 0..dim {
            if dense[a].len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: dense[a].len(),
                });
            }
            for b in 0..dim {
                if dense[a][b].len() != dim {
                    return Err(Error::Dimension {
                        expected: dim,
                        got: dense[a][b].len(),
                    });
                }
                for cc in 0..dim {
                    let forward = dense[a][b][cc];
                    let backward = dense[b][a][cc];
                    if (forward + backward).abs() > 1e-14 {
                        return Err(Error::Validation {
                            check: "structure constant antisymmetry".into(),
                            detail: format!(
                                "C^{}_{}{} + C^{}_{}{} = {:.3e}",
                                cc + 1,
                                a + 1,
                                b + 1,
                                cc + 1,
                                b + 1,
                                a + 1,
                                forward + backward
                            ),
                        });
                    }
                    c[(cc * dim + a) * dim + b] = 0.5 * (forward - backward);
                }
            }
        }
        Ok(StructureConstants {
            dim,
            c,
            labels: None,
        })
    }

    pub fn abelian(dim: usize) -> Self {
        StructureConstants {
            dim,
            c: vec![0.0; dim * dim * dim],
            labels: None,
        }
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Self {
        self.labels = Some(labels);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// `C^c_ab`.
    #[inline]
    pub fn get(&self, c: usize, a: usize, b: usize) -> f64 {
        self.c[(c * self.dim + a) * self.dim + b]
    }

    fn check_dim(&self, v: usize) -> Result<()> {
        if v != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: v,
            });
        }
        Ok(())
    }

    /// `[xi, eta]^c = C^c_ab xi^a eta^b`.
    pub fn bracket(&self, xi: &AlgebraVector, eta: &AlgebraVector) -> Result<AlgebraVector> {
        self.check_dim(xi.dim())?;
        self.check_dim(eta.dim())?;
        let r = self.dim;
        let mut out = DVector::zeros(r);
        for c in 0..r {
            let mut acc = 0.0;
            for a in 0..r {
                let xa = xi.0[a];
                if xa == 0.0 {
                    continue;
                }
                for b in 0..r {
                    acc += self.get(c, a, b) * xa * eta.0[b];
                }
            }
            out[c] = acc;
        }
        Ok(AlgebraVector(out))
    }

    /// Isotropy residual `res_b = C^c_ab xi^a mu_c`; zero exactly when `xi`
    /// lies in the isotropy algebra of `mu` under the coadjoint action.
    pub fn isotropy_residual(
        &self,
        xi: &AlgebraVector,
        mu: &MomentumVector,
    ) -> Result<MomentumVector> {
        self.check_dim(xi.dim())?;
        self.check_dim(mu.dim())?;
        let r = self.dim;
        let mut out = DVector::zeros(r);
        for b in 0..r {
            let mut acc = 0.0;
            for a in 0..r {
                let xa = xi.0[a];
                if xa == 0.0 {
                    continue;
                }
                for c in 0..r {
                    acc += self.get(c, a, b) * xa * mu.0[c];
                }
            }
            out[b] = acc;
        }
        Ok(MomentumVector(out))
    }

    /// Max-norm defect of the Jacobi identity over all index combinations.
    pub fn jacobi_defect(&self) -> f64 {
        let r = self.dim;
        let mut worst: f64 = 0.0;
        for d in 0..r {
            for a in 0..r {
                for b in 0..r {
                    for c in 0..r {
                        let mut acc = 0.0;
                        for e in 0..r {
                            acc += self.get(e, a, b) * self.get(d, e, c)
                                + self.get(e, b, c) * self.get(d, e, a)
                                + self.get(e, c, a) * self.get(d, e, b);
                        }
                        worst = worst.max(acc.abs());
                    }
                }
            }
        }
        worst
    }

    /// The matrix of `ad_theta`, i.e. `(ad_theta)^c_b = C^c_ab theta^a`.
    pub fn ad_matrix(&self, theta: &AlgebraVector) -> Result<DMatrix<f64>> {
        self.check_dim(theta.dim())?;
        let r = self.dim;
        let mut m = DMatrix::zeros(r, r);
        for c in 0..r {
            for b in 0..r {
                let mut acc = 0.0;
                for a in 0..r {
                    acc += self.get(c, a, b) * theta.0[a];
                }
                m[(c, b)] = acc;
            }
        }
        Ok(m)
    }

    /// Right-trivialized dexp: `sum_{k>=0} ad_theta^k delta / (k+1)!`, so that
    /// `d/dt exp(theta + t delta) . exp(theta)^{-1} = hat(dexp(theta, delta))`
    /// at `t = 0`. Rejects arguments with `|ad_theta| >= 2*pi`.
    pub fn dexp(&self, theta: &AlgebraVector, delta: &AlgebraVector) -> Result<AlgebraVector> {
        let ad = self.ad_matrix(theta)?;
        self.check_dim(delta.dim())?;
        let norm = ad.norm();
        if norm >= 2.0 * std::f64::consts::PI {
            return Err(Error::DexpRadius { norm });
        }
        let mut sum = delta.0.clone();
        let mut term = delta.0.clone();
        for k in 1..200 {
            term = (&ad * &term) / (k as f64 + 1.0);
            sum += &term;
            if term.norm() < 1e-15 {
                break;
            }
        }
        Ok(AlgebraVector(sum))
    }
}

/// Matrix exponential by scaling-and-squaring with an order-12 truncated
/// Taylor core; the argument is scaled until its 1-norm is at most 0.5.
pub fn exp_matrix(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("exp_matrix input".into()));
    }
    let n = m.nrows();
    let norm = one_norm(m);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = m / (2f64.powi(squarings as i32));
    let mut sum = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=12u32 {
        term = (&term * &scaled) / (k as f64);
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    Ok(sum)
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for j in 0..m.ncols() {
        let s: f64 = m.column(j).iter().map(|x| x.abs()).sum();
        worst = worst.max(s);
    }
    worst
}

/// A concrete matrix realization of the group: generators `hat(E_a)` of size
/// n x n, used for exp, Ad, and coadjoint transport.
#[derive(Debug, Clone)]
pub struct MatrixGroupRep {
    n: usize,
    generators: Vec<DMatrix<f64>>,
    /// Generators stacked column-wise as vec(E_a), for least-squares
    /// re-expansion of conjugated matrices.
    basis: DMatrix<f64>,
}

impl MatrixGroupRep {
    pub fn new(generators: Vec<DMatrix<f64>>) -> Result<Self> {
        if generators.is_empty() {
            return Err(Error::Invalid("representation needs generators".into()));
        }
        let n = generators[0].nrows();
        for g in &generators {
            if g.nrows() != n || g.ncols() != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: g.nrows().max(g.ncols()),
                });
            }
        }
        let r = generators.len();
        let mut basis = DMatrix::zeros(n * n, r);
        for (a, g) in generators.iter().enumerate() {
            for j in 0..n {
                for i in 0..n {
                    basis[(j * n + i, a)] = g[(i, j)];
                }
            }
        }
        let rank = basis.clone().svd(true, true).rank(1e-10);
        if rank < r {
            return Err(Error::Invalid(
                "generators are linearly dependent".into(),
            ));
        }
        Ok(MatrixGroupRep {
            n,
            generators,
            basis,
        })
    }

    pub fn matrix_size(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.generators.len()
    }

    pub fn generators(&self) -> &[DMatrix<f64>] {
        &self.generators
    }

    pub fn identity(&self) -> DMatrix<f64> {
        DMatrix::identity(self.n, self.n)
    }

    /// `hat(xi) = xi^a hat(E_a)`.
    pub fn hat(&self, xi: &AlgebraVector) -> Result<DMatrix<f64>> {
        if xi.dim() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: xi.dim(),
            });
        }
        let mut m = DMatrix::zeros(self.n, self.n);
        for (a, g) in self.generators.iter().enumerate() {
            m += g * xi.0[a];
        }
        Ok(m)
    }

    /// Group element `exp(hat(xi))`.
    pub fn exp(&self, xi: &AlgebraVector) -> Result<DMatrix<f64>> {
        exp_matrix(&self.hat(xi)?)
    }

    /// Least-squares expansion of `m` in the generator basis; returns the
    /// coefficients and the residual Frobenius norm.
    pub fn expand(&self, m: &DMatrix<f64>) -> Result<(AlgebraVector, f64)> {
        if m.nrows() != self.n || m.ncols() != self.n {
            return Err(Error::Dimension {
                expected: self.n,
                got: m.nrows().max(m.ncols()),
            });
        }
        let mut rhs = DVector::zeros(self.n * self.n);
        for j in 0..self.n {
            for i in 0..self.n {
                rhs[j * self.n + i] = m[(i, j)];
            }
        }
        let svd = self.basis.clone().svd(true, true);
        let coeffs = svd
            .solve(&rhs, 1e-14)
            .map_err(|e| Error::Singular(format!("generator expansion: {e}")))?;
        let residual = (&self.basis * &coeffs - &rhs).norm();
        Ok((AlgebraVector(coeffs), residual))
    }

    /// Max-entry defect of `[E_a, E_b] - C^c_ab E_c` over all generator pairs.
    pub fn commutator_defect(&self, constants: &StructureConstants) -> f64 {
        let r = self.dim();
        let mut worst: f64 = 0.0;
        for a in 0..r {
            for b in 0..r {
                let mut comm = &self.generators[a] * &self.generators[b]
                    - &self.generators[b] * &self.generators[a];
                for c in 0..r {
                    comm -= &self.generators[c] * constants.get(c, a, b);
                }
                worst = worst.max(comm.amax());
            }
        }
        worst
    }

    /// `Ad_g xi`: coordinates of `g hat(xi) g^{-1}` in the generator basis.
    /// Errors when the re-expansion residual exceeds 1e-8, which signals
    /// that `g` is not in the represented group.
    pub fn adjoint(&self, g: &DMatrix<f64>, xi: &AlgebraVector) -> Result<AlgebraVector> {
        let hat = self.hat(xi)?;
        let lu = g.clone().lu();
        let inv = lu
            .try_inverse()
            .ok_or_else(|| Error::Singular("group element in adjoint".into()))?;
        let conj = g * hat * inv;
        let (coeffs, residual) = self.expand(&conj)?;
        let scale = 1.0 + xi.norm();
        if residual > 1e-8 * scale {
            return Err(Error::NotInGroup { residual });
        }
        Ok(coeffs)
    }

    /// The r x r matrix of `Ad_g` in the generator basis.
    pub fn adjoint_matrix(&self, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let r = self.dim();
        let mut m = DMatrix::zeros(r, r);
        for a in 0..r {
            let mut e = DVector::zeros(r);
            e[a] = 1.0;
            let col = self.adjoint(g, &AlgebraVector(e))?;
            m.set_column(a, &col.0);
        }
        Ok(m)
    }

    /// Coadjoint transport `Ad*_g mu = (Ad_g)^T mu`, characterized by
    /// `<Ad*_g mu, eta> = <mu, Ad_g eta>` for all `eta`.
    pub fn coadjoint_transport(
        &self,
        g: &DMatrix<f64>,
        mu: &MomentumVector,
    ) -> Result<MomentumVector> {
        if mu.dim() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: mu.dim(),
            });
        }
        let ad = self.adjoint_matrix(g)?;
        Ok(MomentumVector(ad.transpose() * &mu.0))
    }

    /// Residual measuring whether `g` lies in the represented group, taken
    /// as the worst generator-conjugation re-expansion residual.
    pub fn membership_residual(&self, g: &DMatrix<f64>) -> Result<f64> {
        let lu = g.clone().lu();
        let inv = lu
            .try_inverse()
            .ok_or_else(|| Error::Singular("group element".into()))?;
        let mut worst: f64 = 0.0;
        for gen in &self.generators {
            let conj = g * gen * &inv;
            let (_, residual) = self.expand(&conj)?;
            worst = worst.max(residual);
        }
        Ok(worst)
    }
}

/// A structure-constant table paired with a matrix realization.
#[derive(Debug, Clone)]
pub struct AlgebraBundle {
    pub constants: StructureConstants,
    pub rep: MatrixGroupRep,
    pub name: Option<String>,
}

impl AlgebraBundle {
    pub fn dim(&self) -> usize {
        self.constants.dim()
    }
}

/// so(3) with `[E_1, E_2] = E_3` cyclically; generators are the standard
/// rotation generators so `exp(t hat(E_3))` is a rotation by `t` about z.
pub fn so3() -> AlgebraBundle {
    let constants = StructureConstants::from_brackets(
        3,
        &[(0, 1, 2, 1.0), (1, 2, 0, 1.0), (2, 0, 1, 1.0)],
    )
    .expect("so3 table");
    let mut e1 = DMatrix::zeros(3, 3);
    e1[(1, 2)] = -1.0;
    e1[(2, 1)] = 1.0;
    let mut e2 = DMatrix::zeros(3, 3);
    e2[(0, 2)] = 1.0;
    e2[(2, 0)] = -1.0;
    let mut e3 = DMatrix::zeros(3, 3);
    e3[(0, 1)] = -1.0;
    e3[(1, 0)] = 1.0;
    let rep = MatrixGroupRep::new(vec![e1, e2, e3]).expect("so3 rep");
    AlgebraBundle {
        constants,
        rep,
        name: Some("so3".into()),
    }
}

/// so(2): one-dimensional abelian algebra realized by the planar rotation
/// generator, so group elements are 2 x 2 rotation matrices.
pub fn so2() -> AlgebraBundle {
    let constants = StructureConstants::abelian(1);
    let mut e = DMatrix::zeros(2, 2);
    e[(0, 1)] = -1.0;
    e[(1, 0)] = 1.0;
    let rep = MatrixGroupRep::new(vec![e]).expect("so2 rep");
    AlgebraBundle {
        constants,
        rep,
        name: Some("so2".into()),
    }
}

/// se(2): `[E_3, E_1] = E_2`, `[E_3, E_2] = -E_1`, translations commute.
pub fn se2() -> AlgebraBundle {
    let constants = StructureConstants::from_brackets(
        3,
        &[(2, 0, 1, 1.0), (2, 1, 0, -1.0)],
    )
    .expect("se2 table");
    let mut e1 = DMatrix::zeros(3, 3);
    e1[(0, 2)] = 1.0;
    let mut e2 = DMatrix::zeros(3, 3);
    e2[(1, 2)] = 1.0;
    let mut e3 = DMatrix::zeros(3, 3);
    e3[(0, 1)] = -1.0;
    e3[(1, 0)] = 1.0;
    let rep = MatrixGroupRep::new(vec![e1, e2, e3]).expect("se2 rep");
    AlgebraBundle {
        constants,
        rep,
        name: Some("se2".into()),
    }
}

/// Heisenberg algebra h(3): `[E_1, E_2] = E_3`, `E_3` central; realized by
/// strictly upper-triangular 3 x 3 matrices.
pub fn heisenberg() -> AlgebraBundle {
    let constants =
        StructureConstants::from_brackets(3, &[(0, 1, 2, 1.0)]).expect("h3 table");
    let mut e1 = DMatrix::zeros(3, 3);
    e1[(0, 1)] = 1.0;
    let mut e2 = DMatrix::zeros(3, 3);
    e2[(1, 2)] = 1.0;
    let mut e3 = DMatrix::zeros(3, 3);
    e3[(0, 2)] = 1.0;
    let rep = MatrixGroupRep::new(vec![e1, e2, e3]).expect("h3 rep");
    AlgebraBundle {
        constants,
        rep,
        name: Some("heisenberg".into()),
    }
}

/// Abelian R^k realized by translation generators in (k+1) x (k+1) matrices.
pub fn abelian(k: usize) -> Result<AlgebraBundle> {
    if k == 0 {
        return Err(Error::Invalid("abelian algebra needs dim >= 1".into()));
    }
    let constants = StructureConstants::abelian(k);
    let mut gens = Vec::with_capacity(k);
    for a in 0..k {
        let mut e = DMatrix::zeros(k + 1, k + 1);
        e[(a, k)] = 1.0;
        gens.push(e);
    }
    let rep = MatrixGroupRep::new(gens)?;
    Ok(AlgebraBundle {
        constants,
        rep,
        name: Some(format!("abelian{k}")),
    })
}

/// Look up a built-in algebra by name: `so3`, `so2`, `se2`, `heisenberg`,
/// or `abelian<k>`.
pub fn builtin(name: &str) -> Result<AlgebraBundle> {
    match name {
        "so3" => Ok(so3()),
        "so2" => Ok(so2()),
        "se2" => Ok(se2()),
        "heisenberg" | "h3" => Ok(heisenberg()),
        other => {
            if let Some(rest) = other.strip_prefix("abelian") {
                let k: usize = rest.parse().map_err(|_| {
                    Error::Schema(format!("unknown builtin algebra `{other}`"))
                })?;
                abelian(k)
            } else {
                Err(Error::Schema(format!("unknown builtin algebra `{other}`")))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn av(x: &[f64]) -> AlgebraVector {
        AlgebraVector::from_slice(x)
    }

    fn mv(x: &[f64]) -> MomentumVector {
        MomentumVector::from_slice(x)
    }

    #[test]
    fn bracket_so3_defining_relations() {
        let alg = so3();
        let out = alg
            .constants
            .bracket(&av(&[1.0, 0.0, 0.0]), &av(&[0.0, 1.0, 0.0]))
            .unwrap();
        assert_abs_diff_eq!(out.0[2], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out.0[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out.0[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn bracket_of_vector_with_itself_vanishes() {
        let alg = so3();
        let xi = av(&[0.3, -1.2, 0.7]);
        let out = alg.constants.bracket(&xi, &xi).unwrap();
        assert!(out.norm() < 1e-15);
    }

    #[test]
    fn bracket_heisenberg() {
        let alg = heisenberg();
        let out = alg
            .constants
            .bracket(&av(&[1.0, 1.0, 0.0]), &av(&[0.0, 1.0, 0.0]))
            .unwrap();
        assert_abs_diff_eq!(out.0[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out.0[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out.0[2], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn bracket_dimension_mismatch() {
        let alg = so3();
        assert!(alg
            .constants
            .bracket(&av(&[1.0, 0.0]), &av(&[0.0, 1.0, 0.0]))
            .is_err());
    }

    #[test]
    fn isotropy_parallel_vectors_so3() {
        let alg = so3();
        let out = alg
            .constants
            .isotropy_residual(&av(&[0.0, 0.0, 1.0]), &mv(&[0.0, 0.0, 3.0]))
            .unwrap();
        assert!(out.norm() < 1e-15);
    }

    #[test]
    fn isotropy_cross_product_so3() {
        let alg = so3();
        let out = alg
            .constants
            .isotropy_residual(&av(&[1.0, 0.0, 0.0]), &mv(&[0.0, 1.0, 0.0]))
            .unwrap();
        assert_abs_diff_eq!(out.0[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out.0[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out.0[2], -1.0, epsilon = 1e-15);
    }

    #[test]
    fn isotropy_matches_mu_cross_xi_for_so3() {
        let alg = so3();
        let xi = [0.4, -0.2, 0.9];
        let mu = [1.3, 0.5, -0.6];
        let out = alg
            .constants
            .isotropy_residual(&av(&xi), &mv(&mu))
            .unwrap();
        // independent oracle: res = mu x xi
        let cross = [
            mu[1] * xi[2] - mu[2] * xi[1],
            mu[2] * xi[0] - mu[0] * xi[2],
            mu[0] * xi[1] - mu[1] * xi[0],
        ];
        for b in 0..3 {
            assert_abs_diff_eq!(out.0[b], cross[b], epsilon = 1e-14);
        }
    }

    #[test]
    fn isotropy_abelian_is_zero() {
        let alg = abelian(4).unwrap();
        let out = alg
            .constants
            .isotropy_residual(&av(&[1.0, -2.0, 3.0, 0.5]), &mv(&[0.1, 0.2, 0.3, 0.4]))
            .unwrap();
        assert_eq!(out.norm(), 0.0);
    }

    #[test]
    fn jacobi_defect_of_builtins() {
        assert!(so3().constants.jacobi_defect() <= 1e-15);
        assert!(se2().constants.jacobi_defect() <= 1e-15);
        assert!(heisenberg().constants.jacobi_defect() <= 1e-15);
        assert!(abelian(3).unwrap().constants.jacobi_defect() == 0.0);
    }

    #[test]
    fn jacobi_defect_detects_broken_algebra() {
        // [E_1, E_2] = 0.1 E_1 + E_3 on top of the so(3) relations breaks
        // the identity: the cyclic sum picks up 0.1 [E_1, E_3] = -0.1 E_2.
        let c = StructureConstants::from_brackets(
            3,
            &[
                (0, 1, 2, 1.0),
                (1, 2, 0, 1.0),
                (2, 0, 1, 1.0),
                (0, 1, 0, 0.1),
            ],
        )
        .unwrap();
        assert!(c.jacobi_defect() > 0.05);
    }

    #[test]
    fn commutator_consistency_of_builtins() {
        for alg in [so3(), so2(), se2(), heisenberg(), abelian(2).unwrap()] {
            assert!(alg.rep.commutator_defect(&alg.constants) <= 1e-10);
        }
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let m = DMatrix::zeros(4, 4);
        let e = exp_matrix(&m).unwrap();
        assert!((e - DMatrix::identity(4, 4)).amax() < 1e-15);
    }

    #[test]
    fn exp_rotation_matches_rodrigues() {
        let alg = so3();
        for &t in &[0.3, 1.0, 2.5, -4.0, 11.0] {
            let g = alg.rep.exp(&av(&[0.0, 0.0, t])).unwrap();
            let (c, s) = (t.cos(), t.sin());
            let expected = DMatrix::from_row_slice(
                3,
                3,
                &[c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0],
            );
            assert!((g - expected).amax() < 1e-12, "t = {t}");
        }
    }

    #[test]
    fn exp_inverse_is_group_inverse() {
        let alg = so3();
        let xi = av(&[0.7, -1.1, 0.4]);
        let neg = av(&[-0.7, 1.1, -0.4]);
        let prod = alg.rep.exp(&xi).unwrap() * alg.rep.exp(&neg).unwrap();
        assert!((prod - DMatrix::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn exp_rejects_non_square() {
        assert!(exp_matrix(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn adjoint_at_identity() {
        let alg = so3();
        let xi = av(&[0.2, 0.5, -0.3]);
        let out = alg.rep.adjoint(&alg.rep.identity(), &xi).unwrap();
        assert!((out.0 - xi.0).norm() < 1e-14);
    }

    #[test]
    fn adjoint_quarter_turn_rotates_basis() {
        let alg = so3();
        let g = alg
            .rep
            .exp(&av(&[0.0, 0.0, std::f64::consts::FRAC_PI_2]))
            .unwrap();
        let out = alg.rep.adjoint(&g, &av(&[1.0, 0.0, 0.0])).unwrap();
        assert_abs_diff_eq!(out.0[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.0[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.0[2], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn adjoint_is_homomorphism() {
        let alg = so3();
        let g = alg.rep.exp(&av(&[0.3, -0.8, 0.5])).unwrap();
        let h = alg.rep.exp(&av(&[-1.1, 0.2, 0.9])).unwrap();
        let xi = av(&[0.4, 0.1, -0.7]);
        let lhs = alg.rep.adjoint(&(&g * &h), &xi).unwrap();
        let rhs = alg
            .rep
            .adjoint(&g, &alg.rep.adjoint(&h, &xi).unwrap())
            .unwrap();
        assert!((lhs.0 - rhs.0).norm() < 1e-10);
    }

    #[test]
    fn adjoint_preserves_bracket() {
        let alg = se2();
        let g = alg.rep.exp(&av(&[0.5, -0.2, 0.8])).unwrap();
        let xi = av(&[0.3, 0.4, -0.6]);
        let eta = av(&[-0.5, 0.9, 0.2]);
        let lhs = alg
            .rep
            .adjoint(&g, &alg.constants.bracket(&xi, &eta).unwrap())
            .unwrap();
        let rhs = alg
            .constants
            .bracket(
                &alg.rep.adjoint(&g, &xi).unwrap(),
                &alg.rep.adjoint(&g, &eta).unwrap(),
            )
            .unwrap();
        assert!((lhs.0 - rhs.0).norm() < 1e-10);
    }

    #[test]
    fn adjoint_rejects_non_group_matrix() {
        let alg = so3();
        let g = DMatrix::from_row_slice(
            3,
            3,
            &[2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        );
        match alg.rep.adjoint(&g, &av(&[0.0, 0.0, 1.0])) {
            Err(Error::NotInGroup { residual }) => assert!(residual > 1e-8),
            other => panic!("expected NotInGroup, got {other:?}"),
        }
    }

    #[test]
    fn coadjoint_at_identity() {
        let alg = so3();
        let mu = mv(&[0.4, -0.1, 0.9]);
        let out = alg
            .rep
            .coadjoint_transport(&alg.rep.identity(), &mu)
            .unwrap();
        assert!((out.0 - mu.0).norm() < 1e-14);
    }

    #[test]
    fn coadjoint_pairing_invariance() {
        let alg = so3();
        let g = alg.rep.exp(&av(&[0.4, 0.9, -0.3])).unwrap();
        let ginv = g.clone().try_inverse().unwrap();
        let mu = mv(&[1.0, -2.0, 0.5]);
        let xi = av(&[0.3, 0.7, 1.1]);
        let lhs = alg
            .rep
            .coadjoint_transport(&g, &mu)
            .unwrap()
            .pair(&alg.rep.adjoint(&ginv, &xi).unwrap());
        assert_abs_diff_eq!(lhs, mu.pair(&xi), epsilon = 1e-12);
    }

    #[test]
    fn coadjoint_rotation_preserves_norm() {
        let alg = so3();
        let g = alg
            .rep
            .exp(&av(&[0.0, 0.0, std::f64::consts::FRAC_PI_2]))
            .unwrap();
        let mu = mv(&[1.0, 0.0, 0.0]);
        let out = alg.rep.coadjoint_transport(&g, &mu).unwrap();
        assert_abs_diff_eq!(out.norm(), 1.0, epsilon = 1e-12);
        // quarter turn about z sends the e1 covector onto +-e2
        assert!(out.0[1].abs() > 1.0 - 1e-12);
    }

    #[test]
    fn dexp_at_origin_is_identity() {
        let alg = so3();
        let delta = av(&[0.3, -0.4, 0.8]);
        let out = alg.constants.dexp(&av(&[0.0; 3]), &delta).unwrap();
        assert!((out.0 - delta.0).norm() < 1e-15);
    }

    #[test]
    fn dexp_abelian_is_identity() {
        let alg = abelian(3).unwrap();
        let theta = av(&[2.0, -1.0, 0.5]);
        let delta = av(&[0.1, 0.2, 0.3]);
        let out = alg.constants.dexp(&theta, &delta).unwrap();
        assert!((out.0 - delta.0).norm() < 1e-15);
    }

    #[test]
    fn dexp_matches_matrix_finite_difference() {
        let alg = so3();
        let theta = av(&[0.0, 0.0, 0.3]);
        let delta = av(&[1.0, 0.0, 0.0]);
        let out = alg.constants.dexp(&theta, &delta).unwrap();

        // FD oracle: (exp(theta + s delta) - exp(theta - s delta)) / (2s)
        // times exp(theta)^{-1}, re-expanded in the generator basis.
        let s = 1e-5;
        let plus = alg
            .rep
            .exp(&av(&[theta.0[0] + s * delta.0[0], theta.0[1], theta.0[2]]))
            .unwrap();
        let minus = alg
            .rep
            .exp(&av(&[theta.0[0] - s * delta.0[0], theta.0[1], theta.0[2]]))
            .unwrap();
        let deriv = (plus - minus) / (2.0 * s);
        let ginv = alg.rep.exp(&theta).unwrap().try_inverse().unwrap();
        let (fd, residual) = alg.rep.expand(&(deriv * ginv)).unwrap();
        assert!(residual < 1e-6);
        assert!((out.0 - fd.0).norm() < 1e-6);
    }

    #[test]
    fn dexp_rejects_outside_radius() {
        let alg = so3();
        let theta = av(&[0.0, 0.0, 7.0]);
        assert!(matches!(
            alg.constants.dexp(&theta, &av(&[1.0, 0.0, 0.0])),
            Err(Error::DexpRadius { .. })
        ));
    }

    proptest! {
        #[test]
        fn bracket_antisymmetry(
            raw in proptest::collection::vec(-2.0f64..2.0, 9),
            xi in proptest::collection::vec(-3.0f64..3.0, 3),
            eta in proptest::collection::vec(-3.0f64..3.0, 3),
        ) {
            // arbitrary antisymmetric table on a 3-dim space
            let entries = [
                (0usize, 1usize, 0usize, raw[0]),
                (0, 1, 1, raw[1]),
                (0, 1, 2, raw[2]),
                (1, 2, 0, raw[3]),
                (1, 2, 1, raw[4]),
                (1, 2, 2, raw[5]),
                (2, 0, 0, raw[6]),
                (2, 0, 1, raw[7]),
                (2, 0, 2, raw[8]),
            ];
            let c = StructureConstants::from_brackets(3, &entries).unwrap();
            let xiv = AlgebraVector::from_slice(&xi);
            let etav = AlgebraVector::from_slice(&eta);
            let ab = c.bracket(&xiv, &etav).unwrap();
            let ba = c.bracket(&etav, &xiv).unwrap();
            prop_assert!((ab.0 + ba.0).norm() < 1e-12);
        }
    }
}
