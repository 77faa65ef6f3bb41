//! Batch driver: single steady states, coupling sweeps, exponent tables and
//! scaling collapses, written as JSON and CSV.

mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dicke_hfb::analysis::{
    asymptotic_slopes, best_collapse_exponent, collapse_score, exponent_table, scaling_collapse,
    sweep, Collapse, CollapseCurve, CollapseWindow, MIN_FIT_POINTS,
};
use dicke_hfb::{critical_coupling, observables, solve, Error, Mode};
use log::{info, warn};

use config::{ConfigError, Overrides, RunConfig, DEFAULT_COLLAPSE_POINTS};
use output::ScanPoint;

/// Smallest atom-number list `scaling` accepts before the discard.
const MIN_SCALING_ENTRIES: usize = 4;
/// Exponent used to generate the synthetic collapse.
const SYNTHETIC_EPSILON: f64 = 0.44;
const SCAN_STEPS: usize = 10;

#[derive(Parser)]
#[command(
    name = "dicke-hfb",
    version,
    about = "Open-system Dicke model HFB steady states"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file; standard output when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for independent atom numbers.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true, value_enum)]
    mode: Option<CliMode>,
    /// Random initial guess with this seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Steady state at one coupling, as JSON.
    Solve,
    /// Warm-started sweep over the y grid, as CSV.
    Sweep,
    /// Finite-size exponent table, as JSON.
    Scaling,
    /// Scaling collapse of the soft-mode damping.
    Collapse,
}

#[derive(ValueEnum, Clone, Copy)]
enum CliMode {
    Hfb,
    Bogoliubov,
}

enum Failure {
    Config(String),
    Numerical(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter { .. }
            | Error::NoTransition { .. }
            | Error::InsufficientData(_) => Failure::Config(e.to_string()),
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(format!("cannot write output: {e}"))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::parse("{}")?,
    };
    cfg.apply(Overrides {
        mode: cli.mode.map(|m| match m {
            CliMode::Hfb => Mode::Hfb,
            CliMode::Bogoliubov => Mode::Bogoliubov,
        }),
        seed: cli.seed,
    });
    if let Some(k) = cli.jobs {
        if k == 0 {
            return Err(Failure::Config("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| Failure::Config(e.to_string()))?;
    }
    let out = cli.out.as_deref();
    match cli.command {
        Command::Solve => cmd_solve(&cfg, out),
        Command::Sweep => cmd_sweep(&cfg, out),
        Command::Scaling => cmd_scaling(&cfg, out),
        Command::Collapse => cmd_collapse(&cfg, out),
    }
}

fn cmd_solve(cfg: &RunConfig, out: Option<&Path>) -> Result<(), Failure> {
    cfg.coupling()?;
    let params = cfg.params()?;
    let solver = cfg.solver()?;
    let state = solve(&params, &solver)?;
    let obs = observables(&state)?;
    info!("converged in {} iterations", state.iterations);
    output::emit(out, &output::solve_json(&state, &solver, &obs))?;
    Ok(())
}

fn cmd_sweep(cfg: &RunConfig, out: Option<&Path>) -> Result<(), Failure> {
    let params = cfg.params()?;
    let solver = cfg.solver()?;
    let result = sweep(&params, &solver, &cfg.y_grid()?)?;
    output::emit(out, &output::sweep_csv(&result))?;
    let failed: Vec<String> = result
        .points
        .iter()
        .filter_map(|p| p.error.as_ref().map(|e| format!("y = {}: {e}", p.y)))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Numerical(format!(
            "{} of {} points failed; {}",
            failed.len(),
            result.points.len(),
            failed.join("; ")
        )))
    }
}

fn cmd_scaling(cfg: &RunConfig, out: Option<&Path>) -> Result<(), Failure> {
    let params = cfg.params()?;
    let solver = cfg.solver()?;
    let ns = cfg.atom_numbers()?;
    let discard = cfg.discard(&ns);
    if ns.len() < MIN_SCALING_ENTRIES {
        return Err(Failure::Config(format!(
            "`atom_numbers` has {} entries; at least {MIN_SCALING_ENTRIES} required",
            ns.len()
        )));
    }
    if discard > ns.len() || ns.len() - discard < MIN_FIT_POINTS {
        return Err(Failure::Config(format!(
            "{} atom numbers left after discarding {discard}; at least {MIN_FIT_POINTS} required",
            ns.len().saturating_sub(discard)
        )));
    }
    let grid = cfg.y_grid()?;
    let table = exponent_table(&params, &solver, &ns, discard, &grid)?;
    if let Some(dir) = &cfg.sweep_dir {
        std::fs::create_dir_all(dir)?;
        for &n in &ns[discard..] {
            let sw = sweep(&params.with_atom_number(n), &solver, &grid)?;
            std::fs::write(dir.join(format!("sweep_N{n}.csv")), output::sweep_csv(&sw))?;
        }
    }
    output::emit(out, &output::scaling_json(&table))?;
    if table.omitted.is_empty() {
        Ok(())
    } else {
        let why: Vec<String> = table
            .omitted
            .iter()
            .map(|o| format!("{} {:?}: {}", o.quantity.name(), o.property, o.reason))
            .collect();
        Err(Failure::Numerical(format!(
            "rows not fitted: {}",
            why.join("; ")
        )))
    }
}

/// Exact collapse `|Im ω₁| = ỹ φ(N^ε ỹ)` with `φ(x) = x/(1 + x)`. All curves
/// share one geometric grid of rescaled abscissas inside the window, so the
/// true exponent collapses them without interpolation error.
fn synthetic_curves(
    ns: &[f64],
    window: CollapseWindow,
    points: usize,
) -> Result<Vec<CollapseCurve>, Failure> {
    let (n_min, n_max) = (ns[0], ns[ns.len() - 1]);
    let x_lo = window.lo.abs().min(window.hi.abs()) * n_max.powf(SYNTHETIC_EPSILON);
    let x_hi = window.lo.abs().max(window.hi.abs()) * n_min.powf(SYNTHETIC_EPSILON);
    if !(x_lo < x_hi) {
        return Err(Failure::Config(
            "window too narrow for the synthetic curves to overlap".into(),
        ));
    }
    let sign = window.lo.signum();
    let xs: Vec<f64> = (0..points)
        .map(|i| x_lo * (x_hi / x_lo).powf(i as f64 / (points - 1) as f64))
        .collect();
    Ok(ns
        .iter()
        .map(|&n| {
            let s = n.powf(SYNTHETIC_EPSILON);
            CollapseCurve {
                atom_number: n,
                y_tilde: xs.iter().map(|x| sign * x / s).collect(),
                damping: xs.iter().map(|x| x / s * x / (1.0 + x)).collect(),
            }
        })
        .collect())
}

fn cmd_collapse(cfg: &RunConfig, out: Option<&Path>) -> Result<(), Failure> {
    let params = cfg.params()?;
    let solver = cfg.solver()?;
    let ns = cfg.atom_numbers()?;
    let window = cfg.window()?;
    let points = cfg.collapse_points.unwrap_or(DEFAULT_COLLAPSE_POINTS);
    let synthetic = cfg.synthetic.unwrap_or(false);
    let collapse = if synthetic {
        if points < 2 || ns.len() < 2 {
            return Err(Failure::Config(
                "synthetic collapse needs two curves of two points".into(),
            ));
        }
        let curves = synthetic_curves(&ns, window, points)?;
        let (epsilon, score) = match cfg.epsilon {
            Some(e) => (e, collapse_score(&curves, e)?),
            None => best_collapse_exponent(&curves, 0.0, 1.0)?,
        };
        let (small_x_slope, large_x_slope) = asymptotic_slopes(&curves, epsilon)?;
        Collapse {
            critical_coupling: critical_coupling(&params)?,
            epsilon,
            score,
            small_x_slope,
            large_x_slope,
            curves,
        }
    } else {
        scaling_collapse(&params, &solver, &ns, window, points, cfg.epsilon)?
    };
    let scan: Vec<ScanPoint> = (0..=SCAN_STEPS)
        .map(|i| {
            let epsilon = i as f64 / SCAN_STEPS as f64;
            let score = collapse_score(&collapse.curves, epsilon).unwrap_or(f64::INFINITY);
            ScanPoint { epsilon, score }
        })
        .collect();
    if collapse.score > 0.1 {
        warn!(
            "poor collapse: score {} at epsilon {}",
            collapse.score, collapse.epsilon
        );
    }
    if let Some(path) = &cfg.curves_csv {
        std::fs::write(path, output::curves_csv(&collapse))?;
    }
    output::emit(out, &output::collapse_json(&collapse, synthetic, &scan))?;
    Ok(())
}
