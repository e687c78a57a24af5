//! releq: find, verify, and probe relative equilibria of symmetric
//! Lagrangian systems described by JSON definition files.
//!
//! Exit codes: 0 success, 2 input error, 3 validation failure, 4 no
//! solution found with --require-solution, 5 verification failure,
//! 6 integration failure.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use releq_core::diagnostics::{saari_scan, SaariReport};
use releq_core::dynamics::{
    conservation_summary, ep_integrate, reconstruct, spatial_momentum,
    verify_relative_equilibrium, VerificationReport, VerifyOptions,
};
use releq_core::equilibria::{scan_seeds, NewtonOptions, REReport, ScanMode, ScanSpec};
use releq_core::fd::FdScheme;
use releq_core::liealg::AlgebraVector;
use releq_core::model::{load_system_with_checks, SystemDocument};
use releq_core::systems::{SystemKind, SystemModel};

const EXIT_INPUT: u8 = 2;
const EXIT_VALIDATION: u8 = 3;
const EXIT_NO_SOLUTION: u8 = 4;
const EXIT_VERIFICATION: u8 = 5;
const EXIT_INTEGRATION: u8 = 6;

#[derive(Parser)]
#[command(
    name = "releq",
    about = "Relative-equilibrium solver for G-invariant Lagrangian systems",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug)]
struct OutputArgs {
    /// Output format
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Output path (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Load a system definition and run the named validation checks
    Validate {
        system: PathBuf,
    },
    /// Scan for relative equilibria and cross-validate each candidate
    Find {
        system: PathBuf,
        /// Momentum level to search (comma-separated components)
        #[arg(long, value_delimiter = ',', num_args = 1, allow_hyphen_values = true)]
        mu: Option<Vec<f64>>,
        /// Group velocity to freeze (comma-separated components)
        #[arg(long, value_delimiter = ',', num_args = 1, allow_hyphen_values = true)]
        xi: Option<Vec<f64>>,
        /// Search the full candidate space
        #[arg(long)]
        free: bool,
        /// Number of random seeds
        #[arg(long, default_value_t = 64)]
        seeds: usize,
        /// RNG seed (recorded in the report for reproducibility)
        #[arg(long, default_value_t = 0)]
        rng: u64,
        /// Newton convergence tolerance
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        /// Exit with code 4 when no validated equilibrium is found
        #[arg(long)]
        require_solution: bool,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Re-verify a find report against the unreduced dynamics
    Verify {
        system: PathBuf,
        report: PathBuf,
        /// Verification horizon
        #[arg(long = "T", default_value_t = 10.0)]
        t_end: f64,
        /// Coarse oracle step (the fine grid halves it)
        #[arg(long, default_value_t = 1e-2)]
        h: f64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Integrate the reduced (Euler-Poincare) equations of a Lie-group system
    Integrate {
        system: PathBuf,
        /// Initial body velocity (comma-separated components)
        #[arg(long, value_delimiter = ',', num_args = 1, allow_hyphen_values = true)]
        xi0: Vec<f64>,
        #[arg(long = "T", default_value_t = 10.0)]
        t_end: f64,
        #[arg(long, default_value_t = 1e-3)]
        h: f64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Locked-inertia (Saari) diagnostics along the orbits of a find report
    Saari {
        system: PathBuf,
        report: PathBuf,
        #[arg(long = "T", default_value_t = std::f64::consts::TAU)]
        t_end: f64,
        #[command(flatten)]
        output: OutputArgs,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }

    fn input(message: impl Into<String>) -> Self {
        Failure::new(EXIT_INPUT, message)
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Validate { system } => cmd_validate(&system),
        Command::Find {
            system,
            mu,
            xi,
            free,
            seeds,
            rng,
            tol,
            require_solution,
            output,
        } => cmd_find(&system, mu, xi, free, seeds, rng, tol, require_solution, &output),
        Command::Verify {
            system,
            report,
            t_end,
            h,
            output,
        } => cmd_verify(&system, &report, t_end, h, &output),
        Command::Integrate {
            system,
            xi0,
            t_end,
            h,
            output,
        } => cmd_integrate(&system, &xi0, t_end, h, &output),
        Command::Saari {
            system,
            report,
            t_end,
            output,
        } => cmd_saari(&system, &report, t_end, &output),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("releq: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

/// Effective FD step override from the environment, applied to every model.
fn fd_step_override() -> Result<Option<f64>, Failure> {
    match std::env::var("RELEQ_FD_STEP") {
        Ok(text) => {
            let value: f64 = text
                .parse()
                .map_err(|_| Failure::input(format!("RELEQ_FD_STEP `{text}` is not a number")))?;
            Ok(Some(value))
        }
        Err(_) => Ok(None),
    }
}

fn read_document(path: &std::path::Path) -> Result<SystemDocument, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::input(format!("schema error: {e}")))
}

fn load_model(path: &std::path::Path) -> Result<SystemModel, Failure> {
    let doc = read_document(path)?;
    let (mut model, checks) = load_system_with_checks(&doc)
        .map_err(|e| Failure::input(format!("schema error: {e}")))?;
    for check in &checks {
        if !check.passed {
            return Err(Failure::new(
                EXIT_VALIDATION,
                format!("validation failed [{}]: {}", check.name, check.detail),
            ));
        }
    }
    if let Some(step) = fd_step_override()? {
        let scheme = FdScheme::with_step(step);
        scheme
            .validate()
            .map_err(|e| Failure::input(format!("RELEQ_FD_STEP: {e}")))?;
        model.set_scheme(scheme);
    }
    Ok(model)
}

fn write_output(output: &OutputArgs, text: &str) -> CmdResult {
    match &output.out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.write_all(b"\n"))
                .map_err(|e| Failure::input(format!("cannot write to stdout: {e}")))
        }
    }
}

fn cmd_validate(system: &std::path::Path) -> CmdResult {
    let doc = read_document(system)?;
    let (_, checks) = load_system_with_checks(&doc)
        .map_err(|e| Failure::input(format!("schema error: {e}")))?;
    let mut all_ok = true;
    for check in &checks {
        if check.passed {
            println!("ok   {}", check.name);
        } else {
            println!("FAIL {}: {}", check.name, check.detail);
            all_ok = false;
        }
    }
    if all_ok {
        Ok(())
    } else {
        let first = checks.iter().find(|c| !c.passed).unwrap();
        Err(Failure::new(EXIT_VALIDATION, first.detail.clone()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RunConfigEcho {
    system: String,
    mode: String,
    mu: Option<Vec<f64>>,
    xi: Option<Vec<f64>>,
    seeds: usize,
    rng: u64,
    tol: f64,
    fd_step: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct FindDocument {
    config: RunConfigEcho,
    attempted: usize,
    failed: usize,
    reports: Vec<REReport>,
}

#[allow(clippy::too_many_arguments)]
fn cmd_find(
    system: &std::path::Path,
    mu: Option<Vec<f64>>,
    xi: Option<Vec<f64>>,
    free: bool,
    seeds: usize,
    rng: u64,
    tol: f64,
    require_solution: bool,
    output: &OutputArgs,
) -> CmdResult {
    let model = load_model(system)?;
    let mode = match (&mu, &xi, free) {
        (Some(mu), None, false) => ScanMode::FixedMu(mu.clone()),
        (None, Some(xi), false) => ScanMode::FixedXi(xi.clone()),
        (None, None, true) => ScanMode::Free,
        _ => {
            return Err(Failure::input(
                "choose exactly one of --mu, --xi, or --free",
            ))
        }
    };
    let spec = ScanSpec {
        count: seeds,
        rng_seed: rng,
        newton: NewtonOptions {
            tol,
            ..NewtonOptions::default()
        },
        ..ScanSpec::default()
    };
    let result = scan_seeds(&model, &mode, &spec)
        .map_err(|e| Failure::input(format!("scan failed: {e}")))?;
    if require_solution && result.reports.is_empty() {
        return Err(Failure::new(
            EXIT_NO_SOLUTION,
            "no validated relative equilibrium found",
        ));
    }
    let document = FindDocument {
        config: RunConfigEcho {
            system: system.display().to_string(),
            mode: match &mode {
                ScanMode::FixedMu(_) => "fixed_mu".into(),
                ScanMode::FixedXi(_) => "fixed_xi".into(),
                ScanMode::Free => "free".into(),
            },
            mu,
            xi,
            seeds,
            rng,
            tol,
            fd_step: model.scheme().step_scale,
        },
        attempted: result.attempted,
        failed: result.failed,
        reports: result.reports,
    };
    let text = match output.format {
        Format::Json => serde_json::to_string_pretty(&document)
            .map_err(|e| Failure::input(format!("serialization: {e}")))?,
        Format::Csv => reports_to_csv(&document.reports)?,
    };
    write_output(output, &text)
}

fn reports_to_csv(reports: &[REReport]) -> Result<String, Failure> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let (n, r) = reports
        .first()
        .map(|rep| (rep.candidate.x.len(), rep.candidate.xi.len()))
        .unwrap_or((0, 0));
    let mut header: Vec<String> = Vec::new();
    for i in 1..=n {
        header.push(format!("x{i}"));
    }
    for a in 1..=r {
        header.push(format!("xi{a}"));
    }
    for a in 1..=r {
        header.push(format!("mu{a}"));
    }
    header.extend(
        [
            "energy",
            "res_lewis",
            "res_energy_criterion",
            "res_ep_stationarity",
            "res_amended_gradient",
            "isotropy_ok",
            "reduced_hessian_condition",
            "converged",
            "iterations",
            "validated",
            "continuum",
        ]
        .map(String::from),
    );
    writer
        .write_record(&header)
        .map_err(|e| Failure::input(format!("csv: {e}")))?;
    for rep in reports {
        let mut row: Vec<String> = Vec::new();
        row.extend(rep.candidate.x.iter().map(|v| format!("{v:?}")));
        row.extend(rep.candidate.xi.iter().map(|v| format!("{v:?}")));
        row.extend(rep.mu.iter().map(|v| format!("{v:?}")));
        row.push(format!("{:?}", rep.energy));
        for key in [
            "lewis",
            "energy_criterion",
            "ep_stationarity",
            "amended_gradient",
        ] {
            row.push(
                rep.residuals
                    .get(key)
                    .map(|v| format!("{v:?}"))
                    .unwrap_or_default(),
            );
        }
        row.push(rep.isotropy_ok.to_string());
        row.push(format!("{:?}", rep.reduced_hessian_condition));
        row.push(rep.converged.to_string());
        row.push(rep.iterations.to_string());
        row.push(rep.validated.to_string());
        row.push(rep.continuum.to_string());
        writer
            .write_record(&row)
            .map_err(|e| Failure::input(format!("csv: {e}")))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Failure::input(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Failure::input(format!("csv: {e}")))
}

fn read_reports(path: &std::path::Path) -> Result<Vec<REReport>, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))?;
    let reports = if let Ok(doc) = serde_json::from_str::<FindDocument>(&text) {
        doc.reports
    } else {
        serde_json::from_str::<Vec<REReport>>(&text)
            .map_err(|e| Failure::input(format!("report file: {e}")))?
    };
    if reports.is_empty() {
        return Err(Failure::input("report file contains no candidates"));
    }
    Ok(reports)
}

#[derive(Debug, Serialize)]
struct VerifyEntry {
    candidate_x: Vec<f64>,
    candidate_xi: Vec<f64>,
    passed: bool,
    exact_discrete_solution: bool,
    estimated_order: Option<f64>,
    coarse_defect: f64,
    ep_constancy: Option<f64>,
    report: VerificationReport,
}

fn cmd_verify(
    system: &std::path::Path,
    report_path: &std::path::Path,
    t_end: f64,
    h: f64,
    output: &OutputArgs,
) -> CmdResult {
    let model = load_model(system)?;
    let reports = read_reports(report_path)?;
    let opts = VerifyOptions {
        t_end,
        h,
        ep_step: h.min(1e-3),
    };
    let mut entries = Vec::new();
    let mut all_passed = true;
    for rep in &reports {
        let verification = verify_relative_equilibrium(
            &model,
            &rep.candidate.x,
            &AlgebraVector::from_slice(&rep.candidate.xi),
            &opts,
        )
        .map_err(|e| Failure::input(format!("verification run: {e}")))?;
        all_passed &= verification.passed;
        entries.push(VerifyEntry {
            candidate_x: rep.candidate.x.clone(),
            candidate_xi: rep.candidate.xi.clone(),
            passed: verification.passed,
            exact_discrete_solution: verification.exact_discrete_solution,
            estimated_order: verification.estimated_order,
            coarse_defect: verification.coarse.defect,
            ep_constancy: verification.ep_constancy,
            report: verification,
        });
    }
    let body = serde_json::json!({
        "all_passed": all_passed,
        "t_end": t_end,
        "h": h,
        "results": entries,
    });
    let text = match output.format {
        Format::Json => serde_json::to_string_pretty(&body)
            .map_err(|e| Failure::input(format!("serialization: {e}")))?,
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record([
                "passed",
                "exact_discrete_solution",
                "estimated_order",
                "coarse_defect",
                "ep_constancy",
            ])
            .map_err(|e| Failure::input(format!("csv: {e}")))?;
            for e in &entries {
                w.write_record([
                    e.passed.to_string(),
                    e.exact_discrete_solution.to_string(),
                    e.estimated_order.map(|o| format!("{o:?}")).unwrap_or_default(),
                    format!("{:?}", e.coarse_defect),
                    e.ep_constancy.map(|d| format!("{d:?}")).unwrap_or_default(),
                ])
                .map_err(|err| Failure::input(format!("csv: {err}")))?;
            }
            let bytes = w
                .into_inner()
                .map_err(|e| Failure::input(format!("csv: {e}")))?;
            String::from_utf8(bytes).map_err(|e| Failure::input(format!("csv: {e}")))?
        }
    };
    write_output(output, &text)?;
    if all_passed {
        Ok(())
    } else {
        Err(Failure::new(
            EXIT_VERIFICATION,
            "one or more candidates failed dynamical verification",
        ))
    }
}

fn cmd_integrate(
    system: &std::path::Path,
    xi0: &[f64],
    t_end: f64,
    h: f64,
    output: &OutputArgs,
) -> CmdResult {
    let model = load_model(system)?;
    if model.kind() != SystemKind::LieGroup {
        return Err(Failure::input("integrate requires lie_group system"));
    }
    let xi0 = AlgebraVector::from_slice(xi0);
    let traj = ep_integrate(&model, &xi0, t_end, h)
        .map_err(|e| Failure::new(EXIT_INTEGRATION, format!("integrator: {e}")))?;
    let group = reconstruct(&model, &traj)
        .map_err(|e| Failure::new(EXIT_INTEGRATION, format!("reconstruction: {e}")))?;
    let mu = spatial_momentum(&model, &traj, &group)
        .map_err(|e| Failure::new(EXIT_INTEGRATION, format!("momentum transport: {e}")))?;
    let summary = conservation_summary(&model, &traj, &group)
        .map_err(|e| Failure::new(EXIT_INTEGRATION, format!("summary: {e}")))?;

    let r = model.alg_dim();
    let mut columns = vec!["t".to_string()];
    columns.extend((1..=r).map(|a| format!("xi{a}")));
    columns.extend((1..=r).map(|a| format!("p{a}")));
    columns.extend((1..=r).map(|a| format!("mu{a}")));
    columns.push("energy".to_string());
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(traj.len());
    for k in 0..traj.len() {
        let mut row = Vec::with_capacity(1 + 3 * r + 1);
        row.push(traj.times[k]);
        row.extend(traj.xi[k].iter());
        row.extend(traj.p[k].iter());
        row.extend(mu[k].iter());
        row.push(
            releq_core::dynamics::energy_on_algebra(&model, &traj.xi[k])
                .map_err(|e| Failure::new(EXIT_INTEGRATION, format!("energy: {e}")))?,
        );
        rows.push(row);
    }
    let text = match output.format {
        Format::Json => {
            let body = serde_json::json!({
                "columns": columns,
                "rows": rows,
                "summary": summary,
            });
            serde_json::to_string_pretty(&body)
                .map_err(|e| Failure::input(format!("serialization: {e}")))?
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(&columns)
                .map_err(|e| Failure::input(format!("csv: {e}")))?;
            for row in &rows {
                w.write_record(row.iter().map(|v| format!("{v:?}")))
                    .map_err(|e| Failure::input(format!("csv: {e}")))?;
            }
            let bytes = w
                .into_inner()
                .map_err(|e| Failure::input(format!("csv: {e}")))?;
            let mut text =
                String::from_utf8(bytes).map_err(|e| Failure::input(format!("csv: {e}")))?;
            text.push_str(&format!(
                "# energy_drift={:?}\n# spatial_momentum_drift={:?}\n# body_momentum_norm_drift={:?}\n",
                summary.energy_drift,
                summary.spatial_momentum_drift,
                summary.body_momentum_norm_drift
            ));
            text
        }
    };
    write_output(output, &text)
}

#[derive(Debug, Serialize)]
struct SaariEntry {
    candidate_x: Vec<f64>,
    candidate_xi: Vec<f64>,
    report: SaariReport,
}

fn cmd_saari(
    system: &std::path::Path,
    report_path: &std::path::Path,
    t_end: f64,
    output: &OutputArgs,
) -> CmdResult {
    let model = load_model(system)?;
    let reports = read_reports(report_path)?;
    let mut entries = Vec::new();
    for rep in &reports {
        let saari = saari_scan(
            &model,
            &rep.candidate.x,
            &AlgebraVector::from_slice(&rep.candidate.xi),
            t_end,
        )
        .map_err(|e| Failure::input(format!("saari scan: {e}")))?;
        entries.push(SaariEntry {
            candidate_x: rep.candidate.x.clone(),
            candidate_xi: rep.candidate.xi.clone(),
            report: saari,
        });
    }
    let text = match output.format {
        Format::Json => serde_json::to_string_pretty(&serde_json::json!({ "results": entries }))
            .map_err(|e| Failure::input(format!("serialization: {e}")))?,
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record([
                "naive_variation",
                "refined_variation",
                "naive_formula_defect",
                "refined_formula_defect",
                "samples",
            ])
            .map_err(|e| Failure::input(format!("csv: {e}")))?;
            for e in &entries {
                w.write_record([
                    format!("{:?}", e.report.naive_variation),
                    format!("{:?}", e.report.refined_variation),
                    format!("{:?}", e.report.naive_formula_defect),
                    format!("{:?}", e.report.refined_formula_defect),
                    e.report.samples.to_string(),
                ])
                .map_err(|err| Failure::input(format!("csv: {err}")))?;
            }
            let bytes = w
                .into_inner()
                .map_err(|e| Failure::input(format!("csv: {e}")))?;
            String::from_utf8(bytes).map_err(|e| Failure::input(format!("csv: {e}")))?
        }
    };
    write_output(output, &text)
}
