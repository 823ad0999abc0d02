use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use subcrit_core::greenfn::{find_critical_point_with, robin_with, DomainSpec};
use subcrit_core::nonlinearity::{verify_bound_suite, BoundReport};
use subcrit_core::quadrature::{structural_constants, StructuralConstants};
use subcrit_core::radial_pde::{continuation_sweep, rate_fit, ContinuationSchedule, RateFit};
use subcrit_core::reduced::{reduced_constants, solve_reduced_with};

mod config;

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] subcrit_core::Error),
    #[error("{0}")]
    Tolerance(String),
    #[error("sweep stopped at epsilon = {failed_at:e}; last converged {last:?}")]
    PartialSweep { failed_at: f64, last: Option<f64> },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use subcrit_core::Error as E;
        match self {
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Core(E::Degenerate { .. }) => 3,
            CliError::Core(E::InvalidParameter(_) | E::OutsideDomain(_) | E::Domain { .. } | E::NearBoundary { .. }) => 2,
            CliError::Core(_) | CliError::Tolerance(_) => 1,
            CliError::PartialSweep { .. } => 4,
        }
    }
}

#[derive(Parser)]
#[command(name = "subcrit", version, about = "Numerics for the slightly subcritical Lane-Emden-Fowler problem")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Space dimension.
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Structural constants against their closed forms, plus pointwise bounds.
    VerifyConstants,
    /// Robin function table and critical point.
    Robin,
    /// Root (d0, xi0) of the limit reduced system.
    Reduced,
    /// Radial continuation sweep on the unit ball with a rate fit.
    Sweep,
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
    let path = dir.join(name);
    let mut f = fs::File::create(&path).map_err(|source| CliError::Io { path: path.clone(), source })?;
    f.write_all(contents.as_bytes()).map_err(|source| CliError::Io { path, source })
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<String, CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
    text.push('\n');
    write_file(dir, name, &text)?;
    Ok(text)
}

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Serialize)]
struct ConstantsCheck {
    #[serde(flatten)]
    constants: StructuralConstants,
    frak_b_rel_error: f64,
    relation_rel_error: f64,
    sobolev_rel_error: f64,
    pass: bool,
}

#[derive(Serialize)]
struct ConstantsReport {
    tolerances: config::Tolerances,
    checks: Vec<ConstantsCheck>,
    bounds: Vec<BoundReport>,
    pass: bool,
}

fn verify_constants(cfg: &RunConfig) -> Result<(), CliError> {
    let tol = &cfg.tolerances;
    let mut checks = Vec::new();
    for &n in &cfg.dims {
        let c = structural_constants(n, &cfg.quadrature)?;
        let (fb, rel, sob) = (c.frak_b_rel_error(), c.relation_rel_error(), c.sobolev_rel_error());
        let pass = fb <= tol.frak_b && rel <= tol.relation && sob <= tol.sobolev;
        checks.push(ConstantsCheck { constants: c, frak_b_rel_error: fb, relation_rel_error: rel, sobolev_rel_error: sob, pass });
    }
    let mut bounds = Vec::new();
    if cfg.bound_samples > 0 {
        for &n in &cfg.dims {
            bounds.push(verify_bound_suite(cfg.bound_samples, cfg.bound_eps_max, n, cfg.seed)?);
        }
    }
    let pass = checks.iter().all(|c| c.pass) && bounds.iter().all(|b| b.violations == 0 && b.empirical_c.is_finite());
    let report = ConstantsReport { tolerances: tol.clone(), checks, bounds, pass };
    print!("{}", write_json(&cfg.out_dir, "constants.json", &report)?);
    if !pass {
        let failed: Vec<String> = report
            .checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| {
                format!(
                    "N={}: frakB {:.2e}, relation {:.2e}, sobolev {:.2e}",
                    c.constants.n, c.frak_b_rel_error, c.relation_rel_error, c.sobolev_rel_error
                )
            })
            .chain(report.bounds.iter().filter(|b| b.violations > 0).map(|b| format!("{} bound violations", b.violations)))
            .collect();
        return Err(CliError::Tolerance(format!("tolerance not met: {}", failed.join("; "))));
    }
    Ok(())
}

/// Points along the first axis, strictly inside the domain.
fn table_points(domain: &DomainSpec, count: usize) -> Vec<Vec<f64>> {
    let n = domain.dim();
    let half = match domain {
        DomainSpec::UnitBall { .. } => 0.9,
        // keep the finite-difference stencil inside the box
        DomainSpec::Box { sides, resolution, .. } => sides[0] / 2.0 - 3.0 * sides[0] / (*resolution - 1) as f64,
    };
    (0..count)
        .map(|i| {
            let mut x = vec![0.0; n];
            x[0] = -half + 2.0 * half * i as f64 / (count - 1) as f64;
            x
        })
        .collect()
}

fn robin_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let domain = cfg.domain();
    let n = domain.dim();
    let mut csv = String::new();
    let header: Vec<String> = (1..=n).map(|k| format!("x{k}")).chain(["rho".to_string()]).collect();
    csv.push_str(&header.join(","));
    csv.push('\n');
    for x in table_points(&domain, cfg.table_points) {
        let ev = robin_with(&domain, &x, &cfg.grid)?;
        let row: Vec<String> = ev.x.iter().map(|v| float(*v)).chain([float(ev.rho)]).collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    write_file(&cfg.out_dir, "robin.csv", &csv)?;
    let cp = find_critical_point_with(&domain, &cfg.x0(), cfg.critical_tol, &cfg.grid)?;
    print!("{}", write_json(&cfg.out_dir, "critical_point.json", &cp)?);
    Ok(())
}

fn reduced_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let domain = cfg.domain();
    let x0 = cfg.x0();
    if !domain.contains(&x0) {
        return Err(CliError::Config(format!("x0 = {x0:?} is not inside the domain")));
    }
    let constants = reduced_constants(cfg.n, &cfg.quadrature)?;
    let sol = solve_reduced_with(&domain, &x0, &constants, cfg.critical_tol, &cfg.grid)?;
    print!("{}", write_json(&cfg.out_dir, "reduced.json", &sol)?);
    Ok(())
}

#[derive(Serialize)]
struct SweepSummary {
    #[serde(rename = "N")]
    n: usize,
    d0: f64,
    epsilons: Vec<f64>,
    converged_points: usize,
    last_converged_epsilon: Option<f64>,
    failed_at: Option<f64>,
    rate_fit: Option<RateFit>,
    rate_fit_error: Option<String>,
}

fn sweep_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    let s = &cfg.sweep;
    let mut schedule = match &s.epsilons {
        Some(list) => ContinuationSchedule::new(list.clone(), s.newton)?,
        None => ContinuationSchedule::geometric(s.start, s.ratio, s.stop)?,
    };
    schedule.newton = s.newton;
    let d0 = match s.d0 {
        Some(d) if d > 0.0 => d,
        Some(d) => return Err(CliError::Config(format!("d0 = {d} must be positive"))),
        None => reduced_constants(cfg.n, &cfg.quadrature)?.ratio(),
    };
    let sweep = continuation_sweep(&schedule, cfg.n, d0, &s.mesh)?;

    let mut csv = String::from("epsilon,delta_num,u0,correction_energy,newton_iters,converged\n");
    for p in &sweep.points {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            float(p.epsilon),
            float(p.delta_num),
            float(p.u0),
            float(p.correction_energy),
            p.newton_iters,
            p.converged
        ));
    }
    write_file(&cfg.out_dir, "sweep.csv", &csv)?;

    let (fit, fit_err) = match rate_fit(&sweep.points, cfg.n, s.eps_cap) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let last = sweep.points.last().map(|p| p.epsilon);
    let summary = SweepSummary {
        n: cfg.n,
        d0,
        epsilons: schedule.epsilons.clone(),
        converged_points: sweep.points.len(),
        last_converged_epsilon: last,
        failed_at: sweep.failed_at,
        rate_fit: fit,
        rate_fit_error: fit_err,
    };
    print!("{}", write_json(&cfg.out_dir, "sweep.json", &summary)?);
    if let Some(failed_at) = sweep.failed_at {
        return Err(CliError::PartialSweep { failed_at, last });
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    cfg.apply(cli.n, cli.out, cli.seed);
    cfg.validate()?;
    match cli.command {
        Command::VerifyConstants => verify_constants(&cfg),
        Command::Robin => robin_cmd(&cfg),
        Command::Reduced => reduced_cmd(&cfg),
        Command::Sweep => sweep_cmd(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("subcrit: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
