//! Parameter sweeps, peak refinement, power-law fits of the finite-size
//! exponents and the scaling-ansatz data collapse of the soft-mode damping.

use log::{debug, warn};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{critical_coupling, ModelParams};
use crate::observables::{
    depletion_populations, excitation_spectrum, fano_factor, observables, photon_split, soft_mode,
    ObservableSet, SpectrumPoint,
};
use crate::scf::{
    continue_branch, solve, solve_branch, Guess, SolverConfig, SteadyState, MAX_CONTINUATION_HALVINGS,
};

/// Relative y-tolerance of golden-section peak refinement.
pub const PEAK_REL_TOL: f64 = 1e-5;

/// Minimum number of points in a power-law fit.
pub const MIN_FIT_POINTS: usize = 3;

/// A scalar tracked through the critical region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    /// ⟨ã†ã⟩, maximized.
    IncoherentPhotons,
    /// ⟨c̃₁†c̃₁⟩, maximized.
    SoftModePopulation,
    /// |Im ω₁|, minimized.
    SoftModeDamping,
    /// Fano factor, maximized.
    Fano,
}

impl Quantity {
    pub const ALL: [Quantity; 4] = [
        Quantity::IncoherentPhotons,
        Quantity::SoftModePopulation,
        Quantity::SoftModeDamping,
        Quantity::Fano,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Quantity::IncoherentPhotons => "incoherent_photons",
            Quantity::SoftModePopulation => "pop_c1",
            Quantity::SoftModeDamping => "abs_im_omega1",
            Quantity::Fano => "fano",
        }
    }

    /// The critical extremum is a minimum rather than a maximum.
    pub fn is_minimum(self) -> bool {
        self == Quantity::SoftModeDamping
    }

    /// Value at a converged state, if the state has the required mode.
    pub fn evaluate(self, state: &SteadyState) -> Option<f64> {
        match self {
            Quantity::IncoherentPhotons => Some(photon_split(state).1),
            Quantity::SoftModePopulation => depletion_populations(state).get(1).copied(),
            Quantity::SoftModeDamping => soft_mode(state).map(|w| w.im.abs()),
            Quantity::Fano => Some(fano_factor(state).value),
        }
    }

    /// Same value read from a sweep record.
    pub fn of_point(self, point: &SweepPoint) -> Option<f64> {
        let obs = point.observables.as_ref()?;
        match self {
            Quantity::IncoherentPhotons => Some(obs.incoherent_photons),
            Quantity::SoftModePopulation => obs.depletion_populations.get(1).copied(),
            Quantity::SoftModeDamping => point.soft_mode.map(|w| w.im.abs()),
            Quantity::Fano => Some(obs.fano),
        }
    }

    /// Sign that turns the extremum into a maximum.
    fn orientation(self) -> f64 {
        if self.is_minimum() {
            -1.0
        } else {
            1.0
        }
    }
}

/// One grid point of a sweep.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub y: f64,
    pub state: Option<SteadyState>,
    pub observables: Option<ObservableSet>,
    /// Soft-mode frequency of this state alone (see [`soft_mode`]).
    pub soft_mode: Option<Complex64>,
    /// Branch-labelled frequencies, when the spectrum could be tracked.
    pub spectrum: Option<SpectrumPoint>,
    pub cold_start: bool,
    pub error: Option<Error>,
}

impl SweepPoint {
    pub fn converged(&self) -> bool {
        self.observables.is_some()
    }
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub params: ModelParams,
    pub points: Vec<SweepPoint>,
    /// Why branch labelling failed, if it did.
    pub spectrum_error: Option<Error>,
}

impl SweepResult {
    pub fn y_values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.y).collect()
    }

    pub fn all_converged(&self) -> bool {
        self.points.iter().all(SweepPoint::converged)
    }
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("y_grid", "must not be empty"));
    }
    if grid.iter().any(|y| !y.is_finite() || *y < 0.0) {
        return Err(Error::invalid("y_grid", "entries must be finite and non-negative"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("y_grid", "must be strictly ascending"));
    }
    Ok(())
}

/// Warm-started continuation along `y_grid` with the full observable set at
/// every point. Per-point failures are recorded and the sweep completes.
pub fn sweep(params: &ModelParams, config: &SolverConfig, y_grid: &[f64]) -> Result<SweepResult> {
    validate_grid(y_grid)?;
    params.validate()?;
    config.validate()?;
    let mut points: Vec<SweepPoint> = solve_branch(params, config, y_grid)
        .into_iter()
        .map(|bp| {
            let mut point = SweepPoint {
                y: bp.y,
                state: None,
                observables: None,
                soft_mode: None,
                spectrum: None,
                cold_start: bp.cold_start,
                error: None,
            };
            match bp.state.and_then(|s| observables(&s).map(|o| (s, o))) {
                Ok((s, o)) => {
                    point.soft_mode = soft_mode(&s);
                    point.observables = Some(o);
                    point.state = Some(s);
                }
                Err(e) => {
                    debug!("sweep point y = {} failed: {e}", bp.y);
                    point.error = Some(e);
                }
            }
            point
        })
        .collect();

    let converged: Vec<(usize, f64, &SteadyState)> = points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.state.as_ref().map(|s| (i, p.y, s)))
        .collect();
    let mut spectrum_error = None;
    if !converged.is_empty() {
        let refs: Vec<(f64, &SteadyState)> = converged.iter().map(|&(_, y, s)| (y, s)).collect();
        match excitation_spectrum(&refs) {
            Ok(sp) => {
                let idx: Vec<usize> = converged.iter().map(|c| c.0).collect();
                for (i, sp) in idx.into_iter().zip(sp.points) {
                    points[i].spectrum = Some(sp);
                }
            }
            Err(e) => {
                warn!("excitation spectrum labelling failed: {e}");
                spectrum_error = Some(e);
            }
        }
    }
    Ok(SweepResult {
        params: *params,
        points,
        spectrum_error,
    })
}

/// Location and value of an extremum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub y: f64,
    pub value: f64,
}

/// Golden-section search for the maximum of `f` on `[lo, hi]`, refined until
/// the bracket is narrower than `rel_tol` times its position. Fails with
/// [`Error::NoInteriorExtremum`] when an endpoint is at least as large as
/// the best interior value.
pub fn golden_section_max<F>(mut f: F, lo: f64, hi: f64, rel_tol: f64) -> Result<Peak>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid("bracket", format!("[{lo}, {hi}] is not a finite interval")));
    }
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let f_lo = f(lo)?;
    let f_hi = f(hi)?;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    let scale = lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE);
    while b - a > rel_tol * scale {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    let best = if fc >= fd { Peak { y: c, value: fc } } else { Peak { y: d, value: fd } };
    if f_lo >= best.value || f_hi >= best.value {
        return Err(Error::NoInteriorExtremum { lo, hi });
    }
    Ok(best)
}

/// Refines the extremum of `quantity` inside `bracket` by golden section.
///
/// Every evaluation continues the branch from `start`, a coupling and its
/// converged state (typically the left end of the bracket), as a sweep
/// would, and falls back to a cold solve.
/// A coupling at which neither converges to a stable state lies past the end
/// of the branch and scores as the worst possible value.
pub fn refine_peak(
    params: &ModelParams,
    config: &SolverConfig,
    quantity: Quantity,
    bracket: (f64, f64),
    start: Option<(f64, &Guess)>,
) -> Result<Peak> {
    let sign = quantity.orientation();
    let eval = |y: f64| -> Result<f64> {
        let p = params.with_coupling(y);
        let state = match start {
            Some((y0, g)) => {
                continue_branch(params, config, (y0, g.clone()), y, MAX_CONTINUATION_HALVINGS)
                    .or_else(|_| solve(&p, config))
            }
            None => solve(&p, config),
        };
        let state = match state {
            Ok(s) => s,
            Err(e @ (Error::NotConverged { .. } | Error::Unstable { .. })) => {
                debug!("refine_peak: no steady state at y = {y}: {e}");
                return Ok(f64::NEG_INFINITY);
            }
            Err(e) => return Err(e),
        };
        let v = quantity.evaluate(&state).ok_or_else(|| {
            Error::InsufficientData(format!("{} undefined at y = {y}", quantity.name()))
        })?;
        Ok(sign * v)
    };
    let peak = golden_section_max(eval, bracket.0, bracket.1, PEAK_REL_TOL)?;
    Ok(Peak {
        y: peak.y,
        value: sign * peak.value,
    })
}

/// Locates the extremum of `quantity` on the sweep grid and refines it
/// between the neighbouring converged grid points. The grid point itself is
/// returned when the refinement, which continues the branch from the left
/// neighbour, does not improve on it.
pub fn sweep_peak(sweep: &SweepResult, config: &SolverConfig, quantity: Quantity) -> Result<Peak> {
    let sign = quantity.orientation();
    let valid: Vec<(usize, f64)> = sweep
        .points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| quantity.of_point(p).map(|v| (i, sign * v)))
        .collect();
    if valid.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} converged points with {} defined",
            valid.len(),
            quantity.name()
        )));
    }
    let k = (0..valid.len())
        .max_by(|&a, &b| valid[a].1.total_cmp(&valid[b].1).then(b.cmp(&a)))
        .expect("non-empty");
    let (lo, hi) = (sweep.points[valid[0].0].y, sweep.points[valid[valid.len() - 1].0].y);
    if k == 0 || k == valid.len() - 1 {
        return Err(Error::NoInteriorExtremum { lo, hi });
    }
    let left = &sweep.points[valid[k - 1].0];
    let right = &sweep.points[valid[k + 1].0];
    let guess = left.state.as_ref().map(SteadyState::guess);
    let start = guess.as_ref().map(|g| (left.y, g));
    let grid = Peak { y: sweep.points[valid[k].0].y, value: sign * valid[k].1 };
    match refine_peak(&sweep.params, config, quantity, (left.y, right.y), start) {
        Ok(peak) if sign * peak.value >= valid[k].1 => Ok(peak),
        Ok(_) | Err(Error::NoInteriorExtremum { .. }) => Ok(grid),
        Err(e) => Err(e),
    }
}

/// Least-squares power law `v = prefactor · x^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub exponent: f64,
    pub stderr: f64,
    pub prefactor: f64,
}

/// Ordinary least squares on `(ln x, ln v)`; the exponent is the slope and
/// its standard error follows from the residual variance.
pub fn fit_power_law(x: &[f64], v: &[f64]) -> Result<PowerLaw> {
    if x.len() != v.len() {
        return Err(Error::invalid("v", "length differs from x"));
    }
    if x.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientData(format!(
            "{} points, at least {MIN_FIT_POINTS} required",
            x.len()
        )));
    }
    if x.iter().chain(v).any(|z| !(z.is_finite() && *z > 0.0)) {
        return Err(Error::invalid("data", "power-law fit needs finite positive values"));
    }
    let lx: Vec<f64> = x.iter().map(|z| z.ln()).collect();
    let lv: Vec<f64> = v.iter().map(|z| z.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let mv = lv.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("x", "needs at least two distinct values"));
    }
    let sxv: f64 = lx.iter().zip(&lv).map(|(a, b)| (a - mx) * (b - mv)).sum();
    let slope = sxv / sxx;
    let intercept = mv - slope * mx;
    let ssr: f64 = lx
        .iter()
        .zip(&lv)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let stderr = (ssr / (n - 2.0) / sxx).sqrt();
    Ok(PowerLaw {
        exponent: slope,
        stderr,
        prefactor: intercept.exp(),
    })
}

/// Which feature of a peak a table row fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeakProperty {
    /// The extremal value.
    Height,
    /// |y_peak − y_c|.
    Offset,
}

/// One row of the exponent table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub quantity: Quantity,
    pub property: PeakProperty,
    pub exponent: f64,
    pub stderr: f64,
    pub atom_numbers: Vec<f64>,
    pub discarded: Vec<f64>,
    pub peak_values: Vec<f64>,
    pub peak_locations: Vec<f64>,
}

impl ScalingFit {
    pub fn name(&self) -> String {
        match self.property {
            PeakProperty::Height => format!("{} extremum", self.quantity.name()),
            PeakProperty::Offset => format!("{} |y_peak - y_c|", self.quantity.name()),
        }
    }
}

/// Peak of one quantity at one atom number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakRecord {
    pub atom_number: f64,
    pub quantity: Quantity,
    pub peak: Option<Peak>,
    pub error: Option<String>,
}

/// A table row that could not be fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmittedRow {
    pub quantity: Quantity,
    pub property: PeakProperty,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentTable {
    pub critical_coupling: f64,
    /// Fitted rows in table order: height then offset for each quantity.
    pub rows: Vec<ScalingFit>,
    pub omitted: Vec<OmittedRow>,
    pub peaks: Vec<PeakRecord>,
}

impl ExponentTable {
    pub fn row(&self, quantity: Quantity, property: PeakProperty) -> Option<&ScalingFit> {
        self.rows
            .iter()
            .find(|r| r.quantity == quantity && r.property == property)
    }
}

/// Sweeps every atom number in `atom_numbers` (in parallel) over `y_grid`,
/// refines the four critical extrema and fits the eight table rows on the
/// atom numbers left after dropping the first `discard`.
pub fn exponent_table(
    params: &ModelParams,
    config: &SolverConfig,
    atom_numbers: &[f64],
    discard: usize,
    y_grid: &[f64],
) -> Result<ExponentTable> {
    if atom_numbers.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("atom_numbers", "must be strictly ascending"));
    }
    if discard > atom_numbers.len() || atom_numbers.len() - discard < MIN_FIT_POINTS {
        return Err(Error::InsufficientData(format!(
            "{} atom numbers after discarding {discard}; at least {MIN_FIT_POINTS} required",
            atom_numbers.len().saturating_sub(discard)
        )));
    }
    validate_grid(y_grid)?;
    let y_c = critical_coupling(params)?;
    let kept = &atom_numbers[discard..];

    let per_n: Vec<Vec<PeakRecord>> = kept
        .par_iter()
        .map(|&n| -> Result<Vec<PeakRecord>> {
            let p = params.with_atom_number(n);
            let sw = sweep(&p, config, y_grid)?;
            Ok(Quantity::ALL
                .iter()
                .map(|&q| {
                    let r = sweep_peak(&sw, config, q);
                    if let Err(e) = &r {
                        warn!("N = {n}: no {} peak: {e}", q.name());
                    }
                    PeakRecord {
                        atom_number: n,
                        quantity: q,
                        peak: r.as_ref().ok().copied(),
                        error: r.err().map(|e| e.to_string()),
                    }
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let peaks: Vec<PeakRecord> = per_n.into_iter().flatten().collect();

    let mut rows = Vec::new();
    let mut omitted = Vec::new();
    for q in Quantity::ALL {
        let found: Vec<(f64, Peak)> = peaks
            .iter()
            .filter(|r| r.quantity == q)
            .filter_map(|r| r.peak.map(|p| (r.atom_number, p)))
            .collect();
        let ns: Vec<f64> = found.iter().map(|f| f.0).collect();
        for property in [PeakProperty::Height, PeakProperty::Offset] {
            let v: Vec<f64> = found
                .iter()
                .map(|(_, p)| match property {
                    PeakProperty::Height => p.value,
                    PeakProperty::Offset => (p.y - y_c).abs(),
                })
                .collect();
            match fit_power_law(&ns, &v) {
                Ok(fit) => rows.push(ScalingFit {
                    quantity: q,
                    property,
                    exponent: fit.exponent,
                    stderr: fit.stderr,
                    atom_numbers: ns.clone(),
                    discarded: atom_numbers[..discard].to_vec(),
                    peak_values: found.iter().map(|f| f.1.value).collect(),
                    peak_locations: found.iter().map(|f| f.1.y).collect(),
                }),
                Err(e) => omitted.push(OmittedRow {
                    quantity: q,
                    property,
                    reason: e.to_string(),
                }),
            }
        }
    }
    Ok(ExponentTable {
        critical_coupling: y_c,
        rows,
        omitted,
        peaks,
    })
}

/// |Im ω₁| against ỹ = (y_c − y)/y_c for one atom number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseCurve {
    pub atom_number: f64,
    pub y_tilde: Vec<f64>,
    pub damping: Vec<f64>,
}

impl CollapseCurve {
    /// Rescaled points `(N^ε ỹ, |Im ω₁|/ỹ)`, ordered by the first coordinate.
    pub fn rescaled(&self, epsilon: f64) -> Vec<(f64, f64)> {
        let s = self.atom_number.powf(epsilon);
        let mut pts: Vec<(f64, f64)> = self
            .y_tilde
            .iter()
            .zip(&self.damping)
            .map(|(&t, &d)| (s * t, d / t))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts
    }
}

/// ỹ interval on one side of the critical point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseWindow {
    pub lo: f64,
    pub hi: f64,
}

impl CollapseWindow {
    /// The window must not contain ỹ = 0 or touch it.
    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::invalid("window", "needs finite lo < hi"));
        }
        if self.lo <= 0.0 && self.hi >= 0.0 {
            return Err(Error::invalid(
                "window",
                format!("[{}, {}] crosses y_tilde = 0; keep it on one side", self.lo, self.hi),
            ));
        }
        Ok(())
    }
}

/// Piecewise-linear interpolation of ln φ against ln x.
fn log_interp(pts: &[(f64, f64)], x: f64) -> f64 {
    let lx = x.ln();
    let k = pts.partition_point(|p| p.0 < x).clamp(1, pts.len() - 1);
    let (x0, y0) = (pts[k - 1].0.ln(), pts[k - 1].1.ln());
    let (x1, y1) = (pts[k].0.ln(), pts[k].1.ln());
    if x1 == x0 {
        return pts[k].1;
    }
    (y0 + (y1 - y0) * (lx - x0) / (x1 - x0)).exp()
}

/// Minimum number of rescaled abscissas the curves must share.
const MIN_OVERLAP: usize = 3;

/// Normalized spread of the rescaled curves. At every rescaled abscissa
/// inside the range common to all curves the variance of ln φ across curves
/// is taken; their mean is divided by the variance of ln φ pooled over the
/// whole overlap, so a collapse onto a flat stretch of φ is not rewarded.
/// Zero for a perfect collapse, infinite without enough overlap.
pub fn collapse_score(curves: &[CollapseCurve], epsilon: f64) -> Result<f64> {
    if curves.len() < 2 {
        return Err(Error::InsufficientData("collapse needs at least two curves".into()));
    }
    let mut sets = Vec::with_capacity(curves.len());
    for c in curves {
        if c.y_tilde.len() != c.damping.len() || c.y_tilde.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "curve N = {} has fewer than two points",
                c.atom_number
            )));
        }
        let sign = c.y_tilde[0].signum();
        if c.y_tilde.iter().chain(&c.damping).any(|v| !v.is_finite())
            || c.y_tilde.iter().any(|t| t.signum() != sign || *t == 0.0)
            || c.damping.iter().any(|d| *d <= 0.0)
        {
            return Err(Error::invalid("curves", "need finite one-sided y_tilde and positive damping"));
        }
        let pts: Vec<(f64, f64)> = c
            .rescaled(epsilon)
            .into_iter()
            .map(|(x, f)| (x.abs(), f.abs()))
            .collect();
        sets.push(if sign < 0.0 { pts.into_iter().rev().collect::<Vec<_>>() } else { pts });
    }
    let lo = sets.iter().map(|s| s[0].0).fold(f64::NEG_INFINITY, f64::max);
    let hi = sets.iter().map(|s| s[s.len() - 1].0).fold(f64::INFINITY, f64::min);
    let xs: Vec<f64> = sets
        .iter()
        .flat_map(|s| s.iter().map(|p| p.0))
        .filter(|&x| x >= lo && x <= hi)
        .collect();
    if xs.len() < MIN_OVERLAP {
        return Ok(f64::INFINITY);
    }
    let vals: Vec<Vec<f64>> = xs
        .iter()
        .map(|&x| sets.iter().map(|s| log_interp(s, x).ln()).collect())
        .collect();
    let variance = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|z| (z - m).powi(2)).sum::<f64>() / v.len() as f64
    };
    let spread = vals.iter().map(|v| variance(v)).sum::<f64>() / xs.len() as f64;
    let pooled = variance(&vals.concat());
    if pooled == 0.0 {
        return Ok(if spread == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(spread / pooled)
}

/// ε minimizing [`collapse_score`] on `[lo, hi]`: a coarse scan followed by
/// golden-section refinement around the best scan point.
pub fn best_collapse_exponent(curves: &[CollapseCurve], lo: f64, hi: f64) -> Result<(f64, f64)> {
    const SCAN: usize = 64;
    let step = (hi - lo) / SCAN as f64;
    let mut best = (lo, f64::INFINITY);
    for i in 0..=SCAN {
        let e = lo + step * i as f64;
        let s = collapse_score(curves, e)?;
        if s < best.1 {
            best = (e, s);
        }
    }
    let a = (best.0 - step).max(lo);
    let b = (best.0 + step).min(hi);
    match golden_section_max(|e| collapse_score(curves, e).map(|s| -s), a, b, 1e-10) {
        Ok(p) if -p.value <= best.1 => Ok((p.y, -p.value)),
        _ => Ok(best),
    }
}

/// Slope of ln φ against ln x over the first and the last third of the
/// pooled rescaled data: about −1 and 0 in the two asymptotic regimes.
pub fn asymptotic_slopes(curves: &[CollapseCurve], epsilon: f64) -> Result<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = curves
        .iter()
        .flat_map(|c| c.rescaled(epsilon))
        .map(|(x, f)| (x.abs(), f.abs()))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let third = pts.len() / 3;
    if third < MIN_FIT_POINTS {
        return Err(Error::InsufficientData("too few points for asymptotic slopes".into()));
    }
    let slope = |s: &[(f64, f64)]| -> Result<f64> {
        let (x, v): (Vec<f64>, Vec<f64>) = s.iter().copied().unzip();
        Ok(fit_power_law(&x, &v)?.exponent)
    };
    Ok((slope(&pts[..third])?, slope(&pts[pts.len() - third..])?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Collapse {
    pub critical_coupling: f64,
    pub epsilon: f64,
    pub score: f64,
    pub small_x_slope: f64,
    pub large_x_slope: f64,
    pub curves: Vec<CollapseCurve>,
}

/// Sweeps each atom number over `points` couplings spanning `window` in ỹ,
/// then fits the collapse exponent ε on `[0, 1]` (or scores the given one).
pub fn scaling_collapse(
    params: &ModelParams,
    config: &SolverConfig,
    atom_numbers: &[f64],
    window: CollapseWindow,
    points: usize,
    epsilon: Option<f64>,
) -> Result<Collapse> {
    window.validate()?;
    if atom_numbers.len() < 3 {
        return Err(Error::InsufficientData("collapse needs at least three atom numbers".into()));
    }
    if points < 2 {
        return Err(Error::invalid("points", "at least two grid points"));
    }
    let y_c = critical_coupling(params)?;
    let mut grid: Vec<f64> = (0..points)
        .map(|i| {
            let t = window.lo + (window.hi - window.lo) * i as f64 / (points - 1) as f64;
            y_c * (1.0 - t)
        })
        .collect();
    grid.reverse();
    let curves: Vec<CollapseCurve> = atom_numbers
        .par_iter()
        .map(|&n| -> Result<CollapseCurve> {
            let sw = sweep(&params.with_atom_number(n), config, &grid)?;
            let (y_tilde, damping): (Vec<f64>, Vec<f64>) = sw
                .points
                .iter()
                .filter_map(|p| p.soft_mode.map(|w| ((y_c - p.y) / y_c, w.im.abs())))
                .filter(|(_, d)| *d > 0.0)
                .unzip();
            Ok(CollapseCurve {
                atom_number: n,
                y_tilde,
                damping,
            })
        })
        .collect::<Result<_>>()?;
    let (epsilon, score) = match epsilon {
        Some(e) => (e, collapse_score(&curves, e)?),
        None => best_collapse_exponent(&curves, 0.0, 1.0)?,
    };
    let (small_x_slope, large_x_slope) = asymptotic_slopes(&curves, epsilon)?;
    Ok(Collapse {
        critical_coupling: y_c,
        epsilon,
        score,
        small_x_slope,
        large_x_slope,
        curves,
    })
}
