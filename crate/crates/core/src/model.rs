//! System-definition documents: JSON schema, expression binding, and the
//! validation performed at load time (Jacobi defect, generator commutator
//! consistency, metric symmetry, block invertibility on a sample grid).

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::expr::Expression;
use crate::liealg::{self, AlgebraBundle, MatrixGroupRep, StructureConstants};
use crate::systems::{
    DomainBox, LieGroupSystem, MatrixField, ScalarField, SimpleMechanicalSystem, SystemModel,
    TrivializedSystem,
};

pub const JACOBI_TOL: f64 = 1e-12;
pub const COMMUTATOR_TOL: f64 = 1e-10;
pub const SYMMETRY_TOL: f64 = 1e-10;
pub const SINGULARITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindTag {
    LieGroup,
    SimpleMechanical,
    Trivialized,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum AlgebraInput {
    Builtin(String),
    Explicit {
        dim: usize,
        /// Dense table indexed `[a][b][c]` holding `C^c_ab`.
        c: Vec<Vec<Vec<f64>>>,
        generators: Vec<Vec<Vec<f64>>>,
        #[serde(default)]
        labels: Option<Vec<String>>,
    },
}

#[derive(Debug, Clone, Deserialize)]
pub struct DomainInput {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

/// A parsed system-definition document. The schema is strict: unknown keys
/// are an error, and each kind has its own required fields.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemDocument {
    pub kind: KindTag,
    pub algebra: AlgebraInput,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub l: Option<String>,
    #[serde(default)]
    pub g_ij: Option<Vec<Vec<String>>>,
    #[serde(default)]
    pub g_ab: Option<Vec<Vec<String>>>,
    #[serde(default, rename = "A")]
    pub connection: Option<Vec<Vec<String>>>,
    #[serde(default, rename = "V")]
    pub potential: Option<String>,
    #[serde(default)]
    pub lagrangian: Option<String>,
    #[serde(default)]
    pub domain: Option<DomainInput>,
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
}

/// Named result of one load-time check, for reporting.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

pub fn load_system_from_path(path: &Path) -> Result<SystemModel> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Schema(format!("cannot read {}: {e}", path.display())))?;
    load_system_from_str(&text)
}

pub fn load_system_from_str(text: &str) -> Result<SystemModel> {
    let doc: SystemDocument =
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    load_system(&doc)
}

/// Build and validate a system model from a parsed document.
pub fn load_system(doc: &SystemDocument) -> Result<SystemModel> {
    let (model, checks) = load_system_with_checks(doc)?;
    for check in &checks {
        if !check.passed {
            return Err(Error::Validation {
                check: check.name.clone(),
                detail: check.detail.clone(),
            });
        }
    }
    Ok(model)
}

/// Like `load_system` but returns every named check result instead of
/// stopping at the first failure. Schema problems still error out early.
pub fn load_system_with_checks(doc: &SystemDocument) -> Result<(SystemModel, Vec<CheckResult>)> {
    let algebra = build_algebra(&doc.algebra)?;
    let r = algebra.dim();
    let mut checks = Vec::new();

    let jacobi = algebra.constants.jacobi_defect();
    checks.push(CheckResult {
        name: "jacobi".into(),
        passed: jacobi <= JACOBI_TOL,
        detail: format!("jacobi defect {jacobi:.1e} exceeds {JACOBI_TOL:.0e}"),
    });
    let comm = algebra.rep.commutator_defect(&algebra.constants);
    checks.push(CheckResult {
        name: "generator commutators".into(),
        passed: comm <= COMMUTATOR_TOL,
        detail: format!("commutator defect {comm:.1e} exceeds {COMMUTATOR_TOL:.0e}"),
    });

    let model = match doc.kind {
        KindTag::LieGroup => {
            reject_fields(
                doc,
                "lie_group",
                &[
                    ("n", doc.n.is_some()),
                    ("g_ij", doc.g_ij.is_some()),
                    ("g_ab", doc.g_ab.is_some()),
                    ("A", doc.connection.is_some()),
                    ("V", doc.potential.is_some()),
                    ("lagrangian", doc.lagrangian.is_some()),
                    ("domain", doc.domain.is_some()),
                ],
            )?;
            let src = doc
                .l
                .as_ref()
                .ok_or_else(|| Error::Schema("lie_group requires `l`".into()))?;
            let names: Vec<String> = (1..=r).map(|a| format!("xi{a}")).collect();
            let l = bind_scalar(src, &names, &doc.parameters)?;
            let sys = LieGroupSystem::new(algebra, l);
            let model = SystemModel::lie_group(sys);
            check_velocity_hessian(&model, r, &mut checks);
            model
        }
        KindTag::SimpleMechanical => {
            reject_fields(
                doc,
                "simple_mechanical",
                &[("l", doc.l.is_some()), ("lagrangian", doc.lagrangian.is_some())],
            )?;
            let n = doc
                .n
                .ok_or_else(|| Error::Schema("simple_mechanical requires `n`".into()))?;
            if n == 0 {
                return Err(Error::Schema("base dimension must be positive".into()));
            }
            let xnames: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
            let g_ij = bind_matrix(
                doc.g_ij
                    .as_ref()
                    .ok_or_else(|| Error::Schema("simple_mechanical requires `g_ij`".into()))?,
                n,
                n,
                true,
                &xnames,
                &doc.parameters,
                "g_ij",
            )?;
            let g_ab = bind_matrix(
                doc.g_ab
                    .as_ref()
                    .ok_or_else(|| Error::Schema("simple_mechanical requires `g_ab`".into()))?,
                r,
                r,
                true,
                &xnames,
                &doc.parameters,
                "g_ab",
            )?;
            let connection = doc
                .connection
                .as_ref()
                .map(|rows| bind_matrix(rows, r, n, false, &xnames, &doc.parameters, "A"))
                .transpose()?;
            let potential = bind_scalar(
                doc.potential
                    .as_ref()
                    .ok_or_else(|| Error::Schema("simple_mechanical requires `V`".into()))?,
                &xnames,
                &doc.parameters,
            )?;
            let domain = match &doc.domain {
                Some(d) => {
                    if d.min.len() != n || d.max.len() != n {
                        return Err(Error::Schema(format!(
                            "domain bounds must have length {n}"
                        )));
                    }
                    if d.min.iter().zip(&d.max).any(|(lo, hi)| lo >= hi) {
                        return Err(Error::Schema("domain box is empty".into()));
                    }
                    DomainBox {
                        min: d.min.clone(),
                        max: d.max.clone(),
                    }
                }
                None => DomainBox::unbounded(n),
            };
            let sys = SimpleMechanicalSystem {
                n,
                algebra,
                g_ij,
                g_ab,
                connection,
                potential,
                domain,
            };
            run_simple_checks(&sys, &mut checks)?;
            SystemModel::simple_mechanical(sys)
        }
        KindTag::Trivialized => {
            reject_fields(
                doc,
                "trivialized",
                &[
                    ("l", doc.l.is_some()),
                    ("g_ij", doc.g_ij.is_some()),
                    ("g_ab", doc.g_ab.is_some()),
                    ("A", doc.connection.is_some()),
                    ("V", doc.potential.is_some()),
                    ("domain", doc.domain.is_some()),
                ],
            )?;
            let n = doc
                .n
                .ok_or_else(|| Error::Schema("trivialized requires `n`".into()))?;
            let src = doc
                .lagrangian
                .as_ref()
                .ok_or_else(|| Error::Schema("trivialized requires `lagrangian`".into()))?;
            let mut names: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
            names.extend((1..=n).map(|i| format!("v{i}")));
            names.extend((1..=r).map(|a| format!("w{a}")));
            let lagrangian = bind_scalar(src, &names, &doc.parameters)?;
            let sys = TrivializedSystem {
                n,
                algebra,
                lagrangian,
            };
            let model = SystemModel::trivialized(sys);
            check_velocity_hessian(&model, r, &mut checks);
            model
        }
    };
    Ok((model, checks))
}

fn reject_fields(_doc: &SystemDocument, kind: &str, present: &[(&str, bool)]) -> Result<()> {
    for (name, is_present) in present {
        if *is_present {
            return Err(Error::Schema(format!(
                "field `{name}` is not allowed for kind {kind}"
            )));
        }
    }
    Ok(())
}

fn build_algebra(input: &AlgebraInput) -> Result<AlgebraBundle> {
    match input {
        AlgebraInput::Builtin(name) => liealg::builtin(name),
        AlgebraInput::Explicit {
            dim,
            c,
            generators,
            labels,
        } => {
            let mut constants = StructureConstants::from_dense(*dim, c)?;
            if let Some(l) = labels {
                constants = constants.with_labels(l.clone());
            }
            if generators.len() != *dim {
                return Err(Error::Schema(format!(
                    "expected {dim} generators, got {}",
                    generators.len()
                )));
            }
            let mats: Vec<nalgebra::DMatrix<f64>> = generators
                .iter()
                .map(|rows| {
                    let nrows = rows.len();
                    let ncols = rows.first().map(|r| r.len()).unwrap_or(0);
                    if nrows == 0 || rows.iter().any(|r| r.len() != ncols) || nrows != ncols {
                        return Err(Error::Schema("generators must be square matrices".into()));
                    }
                    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                    Ok(nalgebra::DMatrix::from_row_slice(nrows, ncols, &flat))
                })
                .collect::<Result<_>>()?;
            let rep = MatrixGroupRep::new(mats)?;
            Ok(AlgebraBundle {
                constants,
                rep,
                name: None,
            })
        }
    }
}

fn bind_scalar(
    src: &str,
    names: &[String],
    params: &BTreeMap<String, f64>,
) -> Result<ScalarField> {
    let expr = Expression::parse(src)?;
    let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    Ok(ScalarField::new(expr.bind(&refs, params)?))
}

fn bind_matrix(
    rows: &[Vec<String>],
    nrows: usize,
    ncols: usize,
    symmetric: bool,
    names: &[String],
    params: &BTreeMap<String, f64>,
    field: &str,
) -> Result<MatrixField> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Schema(format!(
            "`{field}` must be a {nrows} x {ncols} matrix of expressions"
        )));
    }
    let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    let mut entries = Vec::with_capacity(nrows * ncols);
    for row in rows {
        for src in row {
            let expr = Expression::parse(src)?;
            entries.push(expr.bind(&refs, params)?);
        }
    }
    MatrixField::new(nrows, ncols, entries, symmetric)
}

fn run_simple_checks(sys: &SimpleMechanicalSystem, checks: &mut Vec<CheckResult>) -> Result<()> {
    let grid = sys.domain.sample_grid(5);
    let mut worst_sym: f64 = 0.0;
    let mut min_sv_ab = f64::INFINITY;
    let mut min_sv_ij = f64::INFINITY;
    let mut evaluated = 0usize;
    for x in &grid {
        let (gab, gij) = match (sys.g_ab.eval(x), sys.g_ij.eval(x)) {
            (Ok(a), Ok(b)) => (a, b),
            // domain-error points on the sample grid are skipped
            _ => continue,
        };
        evaluated += 1;
        worst_sym = worst_sym
            .max(sys.g_ab.asymmetry(x)?)
            .max(sys.g_ij.asymmetry(x)?);
        min_sv_ab = min_sv_ab.min(smallest_singular_value(&gab));
        min_sv_ij = min_sv_ij.min(smallest_singular_value(&gij));
    }
    if evaluated == 0 {
        return Err(Error::Validation {
            check: "sample grid".into(),
            detail: "no domain sample point evaluates cleanly".into(),
        });
    }
    checks.push(CheckResult {
        name: "metric symmetry".into(),
        passed: worst_sym <= SYMMETRY_TOL,
        detail: format!("metric asymmetry {worst_sym:.1e} exceeds {SYMMETRY_TOL:.0e}"),
    });
    checks.push(CheckResult {
        name: "momentum block singular".into(),
        passed: min_sv_ab > SINGULARITY_TOL,
        detail: format!(
            "smallest singular value of (g_ab) on the sample grid is {min_sv_ab:.1e}"
        ),
    });
    checks.push(CheckResult {
        name: "base block singular".into(),
        passed: min_sv_ij > SINGULARITY_TOL,
        detail: format!(
            "smallest singular value of (g_ij) on the sample grid is {min_sv_ij:.1e}"
        ),
    });
    Ok(())
}

fn check_velocity_hessian(model: &SystemModel, r: usize, checks: &mut Vec<CheckResult>) {
    // sample body velocities: origin-adjacent probes plus a skew one
    let mut samples: Vec<Vec<f64>> = vec![vec![0.01; r]];
    for a in 0..r {
        let mut s = vec![0.0; r];
        s[a] = 0.5;
        samples.push(s.clone());
        s[a] = -0.5;
        samples.push(s);
    }
    samples.push((0..r).map(|a| 0.3 + 0.1 * a as f64).collect());
    let n = model.base_dim();
    let mut min_sv = f64::INFINITY;
    let mut ok = true;
    for s in &samples {
        let st = crate::systems::TrivializedState::at_identity(
            model,
            &vec![0.5; n],
            &vec![0.0; n],
            s,
        );
        match model.hessian_blocks(&st) {
            Ok(blocks) => min_sv = min_sv.min(smallest_singular_value(&blocks.g_ab)),
            Err(_) => {
                ok = false;
                break;
            }
        }
    }
    checks.push(CheckResult {
        name: "velocity hessian singular".into(),
        passed: ok && min_sv > SINGULARITY_TOL,
        detail: format!(
            "smallest singular value of the velocity Hessian on samples is {min_sv:.1e}"
        ),
    });
}

fn smallest_singular_value(m: &nalgebra::DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    let svd = m.clone().svd(false, false);
    svd.singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}
