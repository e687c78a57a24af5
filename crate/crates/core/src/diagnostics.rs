//! Saari-conjecture diagnostics on the locked inertia tensor, bi-invariance
//! classification, and momentum-equivariance spot checks.
//!
//! The naive statement (locked inertia constant along a relative
//! equilibrium) is known to fail in general, so its variation is reported
//! and never asserted; the refined quantity `g_ab xi^b` is the one that is
//! constant at a relative equilibrium.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fd;
use crate::liealg::AlgebraVector;
use crate::systems::{SystemKind, SystemModel};

/// Analytic versus orbit-FD derivative of the locked inertia along the
/// flow of `xi` at t = 0.
#[derive(Debug, Clone)]
pub struct SaariDerivative {
    pub analytic: DMatrix<f64>,
    pub fd: DMatrix<f64>,
    /// Max-entry discrepancy between the two.
    pub defect: f64,
}

/// Analytic versus orbit-FD derivative of `g_ab xi^b` along the flow.
#[derive(Debug, Clone)]
pub struct RefinedSaariDerivative {
    pub analytic: DVector<f64>,
    pub fd: DVector<f64>,
    pub defect: f64,
}

/// Variations of the locked inertia along one relative-equilibrium orbit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaariReport {
    /// `max_t |I(t) - I(0)|` (max entry norm).
    pub naive_variation: f64,
    /// `max_t |I(t) xi - I(0) xi|` (max entry norm).
    pub refined_variation: f64,
    /// Analytic-vs-FD defect of the Killing-equation derivative at t = 0.
    pub naive_formula_defect: f64,
    /// Analytic-vs-FD defect of the refined derivative at t = 0.
    pub refined_formula_defect: f64,
    pub samples: usize,
}

const ORBIT_FD_STEP: f64 = 1e-5;

fn orbit_inertia(
    sys: &SystemModel,
    x: &[f64],
    xi: &AlgebraVector,
    t: f64,
) -> Result<DMatrix<f64>> {
    let g = sys.algebra().rep.exp(&AlgebraVector(&xi.0 * t))?;
    sys.locked_inertia(x, &g, xi)
}

/// Derivative of the full locked inertia along `exp(t hat(xi))` at t = 0:
/// the Killing-equation value
/// `-(xi^a C^d_ab g_cd + xi^a C^d_ac g_bd)` next to its FD companion.
pub fn naive_saari_derivative(
    sys: &SystemModel,
    x: &[f64],
    xi: &AlgebraVector,
) -> Result<SaariDerivative> {
    let r = sys.alg_dim();
    let inertia = sys.locked_inertia_ref(x, xi)?;
    let c = &sys.algebra().constants;
    let mut analytic = DMatrix::zeros(r, r);
    for b in 0..r {
        for cc in 0..r {
            let mut acc = 0.0;
            for a in 0..r {
                for d in 0..r {
                    acc -= xi.0[a]
                        * (c.get(d, a, b) * inertia[(cc, d)] + c.get(d, a, cc) * inertia[(b, d)]);
                }
            }
            analytic[(b, cc)] = acc;
        }
    }
    let mut fd_matrix = DMatrix::zeros(r, r);
    for b in 0..r {
        for cc in 0..r {
            fd_matrix[(b, cc)] = fd::curve_derivative(
                |t| Ok(orbit_inertia(sys, x, xi, t)?[(b, cc)]),
                ORBIT_FD_STEP,
                true,
            )?;
        }
    }
    let defect = (&analytic - &fd_matrix).amax();
    Ok(SaariDerivative {
        analytic,
        fd: fd_matrix,
        defect,
    })
}

/// Derivative of `g_bc xi^c` along the flow of `xi` at t = 0: the analytic
/// value `-C^d_ab g_cd xi^a xi^c` next to its FD companion. Zero exactly
/// when the isotropy-type condition `C^c_ab xi^b g_cd xi^d = 0` holds.
pub fn refined_saari_derivative(
    sys: &SystemModel,
    x: &[f64],
    xi: &AlgebraVector,
) -> Result<RefinedSaariDerivative> {
    let r = sys.alg_dim();
    let inertia = sys.locked_inertia_ref(x, xi)?;
    let c = &sys.algebra().constants;
    let mut analytic = DVector::zeros(r);
    for b in 0..r {
        let mut acc = 0.0;
        for a in 0..r {
            for cc in 0..r {
                for d in 0..r {
                    acc -= c.get(d, a, b) * inertia[(cc, d)] * xi.0[a] * xi.0[cc];
                }
            }
        }
        analytic[b] = acc;
    }
    let mut fd_vec = DVector::zeros(r);
    for b in 0..r {
        fd_vec[b] = fd::curve_derivative(
            |t| {
                let m = orbit_inertia(sys, x, xi, t)?;
                Ok((m * &xi.0)[b])
            },
            ORBIT_FD_STEP,
            true,
        )?;
    }
    let defect = (&analytic - &fd_vec).amax();
    Ok(RefinedSaariDerivative {
        analytic,
        fd: fd_vec,
        defect,
    })
}

/// Sample the locked inertia along `exp(t hat(xi)) . m` over `[0, T]` and
/// report the naive and refined variations plus the formula defects at 0.
/// Sampling defaults to 200 points per period estimate `2 pi / |xi|`.
pub fn saari_scan(
    sys: &SystemModel,
    x: &[f64],
    xi: &AlgebraVector,
    t_end: f64,
) -> Result<SaariReport> {
    sys.check_domain(x)?;
    let xi_norm = xi.norm().max(1e-9);
    let period = 2.0 * std::f64::consts::PI / xi_norm;
    let samples = ((200.0 * t_end / period).ceil() as usize).clamp(200, 20_000);
    let i0 = orbit_inertia(sys, x, xi, 0.0)?;
    let ref0 = &i0 * &xi.0;
    let mut naive: f64 = 0.0;
    let mut refined: f64 = 0.0;
    for k in 1..=samples {
        let t = t_end * k as f64 / samples as f64;
        let it = orbit_inertia(sys, x, xi, t)?;
        refined = refined.max((&it * &xi.0 - &ref0).amax());
        naive = naive.max((it - &i0).amax());
    }
    let naive_d = naive_saari_derivative(sys, x, xi)?;
    let refined_d = refined_saari_derivative(sys, x, xi)?;
    Ok(SaariReport {
        naive_variation: naive,
        refined_variation: refined,
        naive_formula_defect: naive_d.defect,
        refined_formula_defect: refined_d.defect,
        samples,
    })
}

/// Bi-invariance defect `max over samples and a of |xi^c C^b_ca p_b(xi)|`;
/// zero exactly when the Lagrangian is invariant under both translations,
/// in which case every sample is a stationary point of the reduced flow.
pub fn bi_invariance_defect(sys: &SystemModel, samples: &[AlgebraVector]) -> Result<f64> {
    if sys.kind() != SystemKind::LieGroup {
        return Err(Error::Invalid(
            "bi_invariance_defect needs a lie_group system".into(),
        ));
    }
    if samples.is_empty() {
        return Err(Error::Invalid("bi_invariance_defect needs samples".into()));
    }
    let r = sys.alg_dim();
    let c = &sys.algebra().constants;
    let mut worst: f64 = 0.0;
    for xi in samples {
        let p = sys.body_momentum(&[], &[], xi.0.as_slice())?;
        for a in 0..r {
            let mut acc = 0.0;
            for cc in 0..r {
                for b in 0..r {
                    acc += xi.0[cc] * c.get(b, cc, a) * p.0[b];
                }
            }
            worst = worst.max(acc.abs());
        }
    }
    Ok(worst)
}

/// Momentum-equivariance defect: the FD derivative of the spatial momentum
/// components along the flow of each generator (carrying the velocity with
/// the flow, so the body velocity stays fixed) against the analytic value
/// `-C^c_ab p_c`. Returns the max absolute discrepancy.
pub fn equivariance_defect(sys: &SystemModel, samples: &[AlgebraVector]) -> Result<f64> {
    if sys.kind() != SystemKind::LieGroup {
        return Err(Error::Invalid(
            "equivariance_defect needs a lie_group system".into(),
        ));
    }
    if samples.is_empty() {
        return Err(Error::Invalid("equivariance_defect needs samples".into()));
    }
    let r = sys.alg_dim();
    let rep = &sys.algebra().rep;
    let c = &sys.algebra().constants;
    let mut worst: f64 = 0.0;
    for xi in samples {
        let p = sys.body_momentum(&[], &[], xi.0.as_slice())?;
        for a in 0..r {
            for b in 0..r {
                let fd_val = fd::curve_derivative(
                    |s| {
                        let mut theta = vec![0.0; r];
                        theta[a] = -s;
                        let ginv = rep.exp(&AlgebraVector::from_slice(&theta))?;
                        let spatial = rep.coadjoint_transport(&ginv, &p)?;
                        Ok(spatial.0[b])
                    },
                    ORBIT_FD_STEP,
                    true,
                )?;
                let mut analytic = 0.0;
                for cc in 0..r {
                    analytic -= c.get(cc, a, b) * p.0[cc];
                }
                worst = worst.max((fd_val - analytic).abs());
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::load_system_from_str;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rigid_body() -> SystemModel {
        load_system_from_str(
            r#"{"kind": "lie_group", "algebra": "so3", "l": "0.5*(xi1^2 + 2*xi2^2 + 3*xi3^2)"}"#,
        )
        .unwrap()
    }

    fn isotropic_body() -> SystemModel {
        load_system_from_str(
            r#"{"kind": "lie_group", "algebra": "so3", "l": "0.5*(xi1^2 + xi2^2 + xi3^2)"}"#,
        )
        .unwrap()
    }

    fn heisenberg_system() -> SystemModel {
        load_system_from_str(
            r#"{"kind": "lie_group", "algebra": "heisenberg", "l": "0.5*(xi1^2 + xi2^2 + xi3^2)"}"#,
        )
        .unwrap()
    }

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

    fn sphere_samples(count: usize, seed: u64) -> Vec<AlgebraVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let v: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-6);
                AlgebraVector::from_slice(&[v[0] / norm, v[1] / norm, v[2] / norm])
            })
            .collect()
    }

    #[test]
    fn naive_derivative_zero_for_abelian() {
        let sys = kepler();
        let d = naive_saari_derivative(
            &sys,
            &[1.3],
            &AlgebraVector::from_slice(&[0.7]),
        )
        .unwrap();
        assert!(d.analytic.amax() == 0.0);
        assert!(d.fd.amax() < 1e-9);
    }

    #[test]
    fn naive_derivative_matches_fd_on_rigid_body() {
        let sys = rigid_body();
        for xi in [[0.0, 0.0, 1.0], [1.0, 1.0, 0.0], [0.3, -0.7, 0.4]] {
            let d = naive_saari_derivative(&sys, &[], &AlgebraVector::from_slice(&xi)).unwrap();
            assert!(d.defect <= 1e-6, "defect {:.3e} at xi {xi:?}", d.defect);
        }
        // entry check at xi = e3: d/dt g_12(0) = -(C^2_31 g_22 + C^1_32 g_11) = -1
        let d = naive_saari_derivative(&sys, &[], &AlgebraVector::from_slice(&[0.0, 0.0, 1.0]))
            .unwrap();
        assert_abs_diff_eq!(d.analytic[(0, 1)], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.fd[(0, 1)], -1.0, epsilon = 1e-7);
        // diagonal entries are flat at t = 0
        assert_abs_diff_eq!(d.analytic[(0, 0)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn naive_derivative_zero_for_central_direction() {
        // e3 spans the centre of the Heisenberg algebra
        let sys = heisenberg_system();
        let d = naive_saari_derivative(&sys, &[], &AlgebraVector::from_slice(&[0.0, 0.0, 1.0]))
            .unwrap();
        assert_eq!(d.analytic.amax(), 0.0);
        assert!(d.fd.amax() < 1e-9);
    }

    #[test]
    fn refined_derivative_vanishes_at_relative_equilibria() {
        let rb = rigid_body();
        let d = refined_saari_derivative(&rb, &[], &AlgebraVector::from_slice(&[0.0, 0.0, 1.0]))
            .unwrap();
        assert!(d.analytic.amax() <= 1e-12);
        assert!(d.fd.amax() <= 1e-9);

        let kp = kepler();
        let d = refined_saari_derivative(&kp, &[1.0], &AlgebraVector::from_slice(&[1.0])).unwrap();
        assert!(d.analytic.amax() <= 1e-12);
    }

    #[test]
    fn refined_derivative_nonzero_off_axis() {
        let sys = rigid_body();
        let s = 1.0 / 2.0f64.sqrt();
        let d = refined_saari_derivative(&sys, &[], &AlgebraVector::from_slice(&[s, s, 0.0]))
            .unwrap();
        assert!(d.analytic.amax() > 0.1);
        assert!(d.defect <= 1e-6);
    }

    #[test]
    fn saari_scan_rigid_body_axis() {
        let sys = rigid_body();
        let report = saari_scan(
            &sys,
            &[],
            &AlgebraVector::from_slice(&[0.0, 0.0, 1.0]),
            2.0 * std::f64::consts::PI,
        )
        .unwrap();
        // g_11(t) = cos^2 t + 2 sin^2 t swings by 1 while g_ab xi stays put
        assert!(report.refined_variation <= 1e-9);
        assert!(report.naive_variation >= 0.9);
        assert!(report.naive_formula_defect <= 1e-6);
        assert!(report.refined_formula_defect <= 1e-6);
    }

    #[test]
    fn saari_scan_isotropic_and_abelian_are_flat() {
        let iso = isotropic_body();
        let report = saari_scan(
            &iso,
            &[],
            &AlgebraVector::from_slice(&[0.3, -0.5, 0.8]),
            2.0 * std::f64::consts::PI,
        )
        .unwrap();
        assert!(report.naive_variation <= 1e-12);
        assert!(report.refined_variation <= 1e-12);

        let kp = kepler();
        let report = saari_scan(&kp, &[1.0], &AlgebraVector::from_slice(&[1.0]), 6.3).unwrap();
        assert!(report.naive_variation <= 1e-12);
        assert!(report.refined_variation <= 1e-12);
    }

    #[test]
    fn bi_invariance_classifies_bodies() {
        let samples = sphere_samples(50, 17);
        let iso = isotropic_body();
        assert!(bi_invariance_defect(&iso, &samples).unwrap() <= 1e-12);
        let rb = rigid_body();
        assert!(bi_invariance_defect(&rb, &samples).unwrap() > 0.5);
    }

    #[test]
    fn bi_invariance_zero_for_abelian() {
        let sys = load_system_from_str(
            r#"{"kind": "lie_group", "algebra": "abelian3", "l": "0.5*(xi1^2+2*xi2^2+3*xi3^2)"}"#,
        )
        .unwrap();
        let samples = sphere_samples(10, 3);
        assert_eq!(bi_invariance_defect(&sys, &samples).unwrap(), 0.0);
    }

    #[test]
    fn bi_invariant_samples_are_all_stationary() {
        let iso = isotropic_body();
        let samples = sphere_samples(50, 17);
        for xi in &samples {
            let res = crate::equilibria::ep_stationarity_residual(&iso, xi).unwrap();
            assert!(res.norm() <= 1e-10);
        }
    }

    #[test]
    fn equivariance_defect_small_on_rigid_body() {
        let sys = rigid_body();
        let samples: Vec<AlgebraVector> = {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            (0..20)
                .map(|_| {
                    AlgebraVector::from_slice(&[
                        rng.random_range(-1.5..1.5),
                        rng.random_range(-1.5..1.5),
                        rng.random_range(-1.5..1.5),
                    ])
                })
                .collect()
        };
        assert!(equivariance_defect(&sys, &samples).unwrap() <= 1e-6);
    }

    #[test]
    fn equivariance_defect_zero_for_abelian() {
        let sys = load_system_from_str(
            r#"{"kind": "lie_group", "algebra": "abelian2", "l": "0.5*(xi1^2+xi2^2)"}"#,
        )
        .unwrap();
        let samples = vec![
            AlgebraVector::from_slice(&[0.4, -1.0]),
            AlgebraVector::from_slice(&[2.0, 0.3]),
        ];
        assert!(equivariance_defect(&sys, &samples).unwrap() <= 1e-12);
    }

    #[test]
    fn broken_transport_is_detected() {
        // negative control: skipping the coadjoint transport freezes the
        // momentum components, so the FD derivative is 0 while the analytic
        // value is O(1)
        let sys = rigid_body();
        let c = &sys.algebra().constants;
        let xi = AlgebraVector::from_slice(&[0.7, -0.4, 1.1]);
        let p = sys.body_momentum(&[], &[], xi.0.as_slice()).unwrap();
        let mut worst: f64 = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                let broken_fd = 0.0f64; // constant components differentiate to zero
                let mut analytic = 0.0;
                for cc in 0..3 {
                    analytic -= c.get(cc, a, b) * p.0[cc];
                }
                worst = worst.max((broken_fd - analytic).abs());
            }
        }
        assert!(worst > 1e-2);
    }
}
