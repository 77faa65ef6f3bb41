//! CSV rows and JSON documents written by the commands.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::Path;

use dicke_hfb::analysis::{Collapse, ExponentTable, ScalingFit, SweepPoint, SweepResult};
use dicke_hfb::fluctuations::Layout;
use dicke_hfb::{ModelParams, ObservableSet, SolverConfig, SteadyState};
use num_complex::Complex64;
use serde::Serialize;

pub const SWEEP_HEADER: &str =
    "y,coherent_photons,incoherent_photons,pop_c1,pop_c2,fano,log_negativity,\
re_omega1,im_omega1,re_omega_cav,im_omega_cav,re_omega2,im_omega2,converged";

pub const CURVE_HEADER: &str = "atom_number,x,phi";

/// Shortest decimal in scientific notation that parses back to `v`.
pub fn num(v: f64) -> String {
    format!("{v:e}")
}

fn sweep_row(p: &SweepPoint) -> String {
    let obs = p.observables.as_ref();
    let pop = |j: usize| obs.and_then(|o| o.depletion_populations.get(j).copied());
    let w = |f: fn(&dicke_hfb::observables::SpectrumPoint) -> Complex64| p.spectrum.as_ref().map(f);
    let (w1, wc, w2) = (w(|s| s.omega1), w(|s| s.cavity), w(|s| s.omega2));
    let cols = [
        obs.map(|o| o.coherent_photons),
        obs.map(|o| o.incoherent_photons),
        pop(1),
        pop(2),
        obs.map(|o| o.fano),
        obs.map(|o| o.log_negativity),
        w1.map(|z| z.re),
        w1.map(|z| z.im),
        wc.map(|z| z.re),
        wc.map(|z| z.im),
        w2.map(|z| z.re),
        w2.map(|z| z.im),
    ];
    let mut row = num(p.y);
    for c in cols {
        row.push(',');
        row.push_str(&num(c.unwrap_or(f64::NAN)));
    }
    row.push_str(if p.converged() { ",true" } else { ",false" });
    row
}

/// One CSV line per grid point; quantities of failed points are `NaN`.
pub fn sweep_csv(sweep: &SweepResult) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for p in &sweep.points {
        out.push_str(&sweep_row(p));
        out.push('\n');
    }
    out
}

pub fn curves_csv(collapse: &Collapse) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for c in &collapse.curves {
        for (x, phi) in c.rescaled(collapse.epsilon) {
            let _ = writeln!(out, "{},{},{}", num(c.atom_number), num(x), num(phi));
        }
    }
    out
}

#[derive(Serialize)]
struct Convergence {
    converged: bool,
    iterations: usize,
    residual: f64,
    condensate_clamped: bool,
}

#[derive(Serialize)]
struct MeanField {
    alpha: Complex64,
    gamma: Vec<Complex64>,
    condensate: f64,
    chemical_potential: f64,
}

#[derive(Serialize)]
struct Moments {
    /// Operator order of rows and columns; entry (i, j) is ⟨x_i x_j⟩.
    operators: Vec<String>,
    values: Vec<Vec<Complex64>>,
}

#[derive(Serialize)]
struct SolveDocument<'a> {
    params: &'a ModelParams,
    coupling: f64,
    solver: &'a SolverConfig,
    convergence: Convergence,
    mean_field: MeanField,
    moments: Moments,
    observables: &'a ObservableSet,
}

fn operator_names(layout: Layout) -> Vec<String> {
    let mut names = vec!["a".to_string(), "a_dag".to_string()];
    names.extend((0..layout.modes).map(|j| format!("c{j}")));
    names.extend((0..layout.modes).map(|j| format!("c{j}_dag")));
    names
}

pub fn solve_json(state: &SteadyState, solver: &SolverConfig, obs: &ObservableSet) -> String {
    let mf = &state.meanfield;
    let corr = &state.corr_fourier;
    let doc = SolveDocument {
        params: &state.params,
        coupling: state.params.nominal_coupling(),
        solver,
        convergence: Convergence {
            converged: state.converged,
            iterations: state.iterations,
            residual: state.residual,
            condensate_clamped: state.condensate_clamped,
        },
        mean_field: MeanField {
            alpha: mf.alpha,
            gamma: mf.gamma.iter().copied().collect(),
            condensate: mf.condensate,
            chemical_potential: mf.mu,
        },
        moments: Moments {
            operators: operator_names(corr.layout),
            values: corr
                .moments
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
        },
        observables: obs,
    };
    pretty(&doc)
}

#[derive(Serialize)]
struct NamedRow<'a> {
    name: String,
    #[serde(flatten)]
    fit: &'a ScalingFit,
}

#[derive(Serialize)]
struct ScalingDocument<'a> {
    critical_coupling: f64,
    rows: Vec<NamedRow<'a>>,
    omitted: &'a [dicke_hfb::analysis::OmittedRow],
    peaks: &'a [dicke_hfb::analysis::PeakRecord],
}

pub fn scaling_json(table: &ExponentTable) -> String {
    pretty(&ScalingDocument {
        critical_coupling: table.critical_coupling,
        rows: table
            .rows
            .iter()
            .map(|fit| NamedRow {
                name: fit.name(),
                fit,
            })
            .collect(),
        omitted: &table.omitted,
        peaks: &table.peaks,
    })
}

#[derive(Serialize)]
pub struct ScanPoint {
    pub epsilon: f64,
    pub score: f64,
}

#[derive(Serialize)]
struct CollapseDocument<'a> {
    critical_coupling: f64,
    epsilon: f64,
    score: f64,
    small_x_slope: f64,
    large_x_slope: f64,
    synthetic: bool,
    scan: &'a [ScanPoint],
}

pub fn collapse_json(c: &Collapse, synthetic: bool, scan: &[ScanPoint]) -> String {
    pretty(&CollapseDocument {
        critical_coupling: c.critical_coupling,
        epsilon: c.epsilon,
        score: c.score,
        small_x_slope: c.small_x_slope,
        large_x_slope: c.large_x_slope,
        synthetic,
        scan,
    })
}

fn pretty<T: Serialize>(doc: &T) -> String {
    let mut s =
        serde_json::to_string_pretty(doc).expect("documents contain only serializable data");
    s.push('\n');
    s
}

/// Writes to `path`, or to standard output without one.
pub fn emit(path: Option<&Path>, text: &str) -> io::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text),
        None => io::stdout().lock().write_all(text.as_bytes()),
    }
}
