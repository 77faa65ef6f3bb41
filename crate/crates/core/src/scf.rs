//! Self-consistent iteration of mean field and fluctuation moments.
//!
//! Between iterations the state is kept in the Fourier basis (α, γ and the
//! c̃ moments) so that mixing is insensitive to the re-diagonalization of M.

use std::collections::VecDeque;

use log::{trace, warn};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fluctuations::{
    assemble_drift, bi_orthogonal_eigensystem, steady_state_correlations, CorrelationTable,
    EigenSystem, FluctuationSystem,
};
use crate::meanfield::{
    back_action_vector, chemical_potential, condensate_number, decouple_atomic_modes,
    effective_matrix, imaginary_residue, update_alpha, update_beta, MeanFieldState, DEFAULT_GUARD,
    MIN_CONDENSATE_FRACTION, MU_IMAG_TOL,
};
use crate::model::{build_kernels, KernelMatrices, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Fluctuation moments feed back into the mean field.
    #[default]
    Hfb,
    /// Thermodynamic limit: back-action held at zero and N_c = N.
    Bogoliubov,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Init {
    /// Converged Bogoliubov-mode solution of the same parameters, or the
    /// deterministic guess when that fails. Equivalent to `Deterministic` in
    /// Bogoliubov mode.
    #[default]
    Bogoliubov,
    /// α = 10⁻³, β = e₀, vanishing moments.
    Deterministic,
    Random { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub mode: Mode,
    pub max_iterations: usize,
    pub alpha_tolerance: f64,
    pub correlation_tolerance: f64,
    pub mixing: f64,
    /// History length of Anderson acceleration; 0 gives plain linear mixing.
    pub anderson_depth: usize,
    pub init: Init,
    pub guard: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            mode: Mode::Hfb,
            max_iterations: 5000,
            alpha_tolerance: 1e-10,
            correlation_tolerance: 1e-8,
            mixing: 0.3,
            anderson_depth: 5,
            init: Init::Bogoliubov,
            guard: DEFAULT_GUARD,
        }
    }
}

impl SolverConfig {
    pub fn bogoliubov() -> Self {
        SolverConfig {
            mode: Mode::Bogoliubov,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mixing > 0.0 && self.mixing <= 1.0) {
            return Err(Error::invalid("mixing", "must lie in (0, 1]"));
        }
        if !(self.alpha_tolerance > 0.0) {
            return Err(Error::invalid("alpha_tolerance", "must be positive"));
        }
        if !(self.correlation_tolerance > 0.0) {
            return Err(Error::invalid("correlation_tolerance", "must be positive"));
        }
        if !(self.guard > 0.0) {
            return Err(Error::invalid("guard", "must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations", "must be positive"));
        }
        Ok(())
    }
}

/// Iteration state in the Fourier basis.
#[derive(Debug, Clone)]
pub struct Guess {
    pub alpha: Complex64,
    pub gamma: DVector<Complex64>,
    pub corr: CorrelationTable,
}

impl Guess {
    pub fn deterministic(modes: usize) -> Self {
        Guess {
            alpha: Complex64::new(1e-3, 0.0),
            gamma: unit(modes, 0),
            corr: CorrelationTable::zeros(modes),
        }
    }

    pub fn random(modes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let alpha = Complex64::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
        let gamma = DVector::from_fn(modes, |j, _| {
            let base = if j == 0 { 1.0 } else { 0.0 };
            Complex64::new(base + rng.gen_range(-0.3..0.3), 0.0)
        })
        .normalize();
        let mut corr = CorrelationTable::zeros(modes);
        for z in corr.moments.iter_mut() {
            *z = Complex64::new(rng.gen_range(-1e-2..1e-2), rng.gen_range(-1e-2..1e-2));
        }
        Guess { alpha, gamma, corr }
    }

    /// Replaces γ and the moments by their Z₂-even parts.
    fn project_even(&mut self) {
        let mut flipped = self.clone();
        flipped.flip_parity();
        self.corr.moments = (&self.corr.moments + &flipped.corr.moments) * Complex64::from(0.5);
        let even = (&self.gamma + &flipped.gamma) * Complex64::from(0.5);
        if even.norm() > 0.0 {
            self.gamma = even.normalize();
        }
    }

    /// Applies the Z₂ map ã → −ã, c̃ₙ → (−1)ⁿc̃ₙ.
    fn flip_parity(&mut self) {
        self.alpha = -self.alpha;
        for (n, g) in self.gamma.iter_mut().enumerate() {
            if n % 2 == 1 {
                *g = -*g;
            }
        }
        let l = self.corr.layout;
        let sign = |i: usize| -> f64 {
            let odd = match i {
                0 | 1 => true,
                i if i < 2 + l.modes => (i - 2) % 2 == 1,
                i => (i - 2 - l.modes) % 2 == 1,
            };
            if odd {
                -1.0
            } else {
                1.0
            }
        };
        let n = l.size();
        for r in 0..n {
            for c in 0..n {
                self.corr.moments[(r, c)] *= sign(r) * sign(c);
            }
        }
    }
}

fn unit(n: usize, k: usize) -> DVector<Complex64> {
    DVector::from_fn(n, |j, _| if j == k { 1.0.into() } else { 0.0.into() })
}

/// Converged (or last) iterate with everything derived from it.
#[derive(Debug, Clone)]
pub struct SteadyState {
    pub params: ModelParams,
    pub mode: Mode,
    pub meanfield: MeanFieldState,
    pub system: FluctuationSystem,
    pub eig: EigenSystem,
    /// Moments in the decoupled basis of `meanfield.transform`.
    pub corr: CorrelationTable,
    /// Moments in the Fourier basis.
    pub corr_fourier: CorrelationTable,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
    /// N_c hit its lower clamp at the last iteration.
    pub condensate_clamped: bool,
}

impl SteadyState {
    pub fn guess(&self) -> Guess {
        Guess {
            alpha: self.meanfield.alpha,
            gamma: self.meanfield.gamma.clone(),
            corr: self.corr_fourier.clone(),
        }
    }

    /// Largest growth rate max_j Im ω_j of the linearized dynamics.
    pub fn growth_rate(&self) -> f64 {
        max_growth(&self.eig)
    }
}

fn max_growth(eig: &EigenSystem) -> f64 {
    eig.omegas.iter().map(|w| w.im).fold(f64::NEG_INFINITY, f64::max)
}

/// Cavity amplitude used to break the Z₂ symmetry of an unstable iterate.
const SEED_AMPLITUDE: f64 = 1e-3;

/// Growth rates below this count as neutral.
const STABILITY_TOL: f64 = 1e-9;

/// Outcome of one pass through the iteration steps.
struct Step {
    next: Guess,
    meanfield: MeanFieldState,
    system: FluctuationSystem,
    eig: EigenSystem,
    corr: CorrelationTable,
    stable: bool,
    clamped: bool,
}

/// Holds the fixed data of a run and performs iteration steps.
pub struct Solver {
    params: ModelParams,
    config: SolverConfig,
    kernels: KernelMatrices,
}

impl Solver {
    pub fn new(params: ModelParams, config: SolverConfig) -> Result<Self> {
        params.validate()?;
        config.validate()?;
        let kernels = build_kernels(params.mode_cutoff)?;
        Ok(Solver {
            params,
            config,
            kernels,
        })
    }

    pub fn initial_guess(&self) -> Guess {
        let m = self.params.mode_count();
        match self.config.init {
            Init::Deterministic => Guess::deterministic(m),
            Init::Random { seed } => Guess::random(m, seed),
            Init::Bogoliubov if self.config.mode == Mode::Bogoliubov => Guess::deterministic(m),
            Init::Bogoliubov => {
                let config = SolverConfig {
                    mode: Mode::Bogoliubov,
                    ..self.config
                };
                Solver::new(self.params, config)
                    .and_then(|s| s.run(Guess::deterministic(m)))
                    .ok()
                    .filter(|s| s.converged)
                    .map(|s| s.guess())
                    .unwrap_or_else(|| Guess::deterministic(m))
            }
        }
    }

    fn step(&self, cur: &Guess) -> Result<Step> {
        let p = &self.params;
        let hfb = self.config.mode == Mode::Hfb;
        let modes = p.mode_count();
        let zero = CorrelationTable::zeros(modes);
        let back_fourier = if hfb { &cur.corr } else { &zero };

        // (1) condensate number and couplings
        let count = if hfb {
            condensate_number(p.atom_number, &cur.corr)?
        } else {
            crate::meanfield::CondensateCount {
                value: p.atom_number,
                clamped: false,
            }
        };
        let nc = count.value;
        // (2)-(3) effective matrix and decoupled basis
        let m = effective_matrix(p, &self.kernels, cur.alpha, nc, back_fourier)?;
        let dec = decouple_atomic_modes(&m, &self.kernels)?;
        let ot = dec.transform.transpose();
        let back = back_fourier.rotate(&ot);
        let beta_old = ot.map(Complex64::from) * &cur.gamma;

        let mut state = MeanFieldState {
            alpha: cur.alpha,
            gamma: cur.gamma.clone(),
            beta: beta_old,
            condensate: nc,
            mu: 0.0,
            omega: 0.0,
            transform: dec.transform,
            lambda: dec.lambda,
            mt1: dec.mt1,
            mt2: dec.mt2,
        };
        // (4) back-action and chemical potential
        let r = back_action_vector(p, &state, &back)?;
        state.mu = chemical_potential(&state.lambda, &state.beta, &r);
        // (5) condensate
        state.beta = update_beta(&state.lambda, state.mu, &r, self.config.guard);
        state.gamma = state.transform.map(Complex64::from) * &state.beta;
        // (6) cavity field
        let (alpha, omega) = update_alpha(p, &state, &back)?;
        state.alpha = alpha;
        state.omega = omega;
        // (7) fluctuation matrix and eigensystem
        let system = assemble_drift(p, &state, &back, true)?;
        let eig = bi_orthogonal_eigensystem(&system.drift)?;
        let stable = max_growth(&eig) <= STABILITY_TOL;
        // (8) moments; an unstable linearization has no steady state, and
        // its image sends the moments towards the Bogoliubov limit
        let corr = if stable {
            steady_state_correlations(&eig, &system.diffusion, system.layout)?
        } else {
            CorrelationTable::zeros(modes)
        };
        let corr_fourier = corr.rotate(&state.transform);

        let next = Guess {
            alpha,
            gamma: state.gamma.clone(),
            corr: corr_fourier,
        };
        Ok(Step {
            next,
            meanfield: state,
            system,
            eig,
            corr,
            stable,
            clamped: count.clamped,
        })
    }

    /// Iterates from `start` until the mean field and the moments settle.
    /// Hitting the iteration limit returns the last iterate with
    /// `converged == false`.
    pub fn run(&self, start: Guess) -> Result<SteadyState> {
        let cfg = &self.config;
        let mut cur = start;
        let mut mixing = cfg.mixing;
        let mut increases = 0;
        let mut last_residual = f64::INFINITY;
        let mut iterations = 0;
        let mut anderson = Anderson::new(cfg.anderson_depth);
        // Plain-mixing iterate and its residual, kept while an accelerated
        // step is on trial.
        let mut fallback: Option<(Guess, f64)> = None;
        let mut cooldown = 0;
        loop {
            iterations += 1;
            let flipped = cur.alpha.re < 0.0;
            if flipped {
                cur.flip_parity();
            }
            let step = self.step(&cur)?;
            let d_alpha = (step.next.alpha - cur.alpha).norm();
            let d_gamma = (&step.next.gamma - &cur.gamma).norm();
            let scale = step.next.corr.max_abs().max(1.0);
            let d_corr = step.next.corr.max_abs_diff(&cur.corr) / scale;
            let done = step.stable
                && d_alpha < cfg.alpha_tolerance
                && d_gamma < 10.0 * cfg.alpha_tolerance
                && d_corr < cfg.correlation_tolerance;
            let mf_residual = d_alpha.max(d_gamma / 10.0);
            let residual = mf_residual.max(d_corr);
            // Slaved moments can jump where a decoupling mode crosses the
            // weight threshold, so only the mean field judges progress there.
            let progress = if cfg.mode == Mode::Bogoliubov { mf_residual } else { residual };
            if let Some((plain, before)) = fallback.take() {
                if !step.stable || progress > ACCELERATION_REJECT * before {
                    cur = plain;
                    anderson.clear();
                    cooldown = ACCELERATION_COOLDOWN;
                    if iterations >= cfg.max_iterations {
                        return Err(Error::NotConverged {
                            iterations,
                            residual,
                        });
                    }
                    continue;
                }
            }
            trace!(
                "iteration {iterations}: alpha={:e} N_c={} stable={} d_alpha={d_alpha:e} d_corr={d_corr:e}",
                step.next.alpha,
                step.meanfield.condensate,
                step.stable
            );

            if done || iterations >= cfg.max_iterations {
                return Ok(SteadyState {
                    params: self.params,
                    mode: cfg.mode,
                    meanfield: step.meanfield,
                    system: step.system,
                    eig: step.eig,
                    corr: step.corr,
                    corr_fourier: step.next.corr,
                    converged: done,
                    iterations,
                    residual,
                    condensate_clamped: step.clamped,
                });
            }

            if residual > last_residual {
                increases += 1;
                if increases >= 3 {
                    mixing = mixing.min(0.1);
                }
            }
            last_residual = residual;
            // The first update replaces the initial guess outright.
            let w = if iterations == 1 { 1.0 } else { mixing };
            let plain = self.guarded_mix(&cur, &step.next, w);
            cur = if step.stable && !flipped {
                anderson.push(&cur, &step.next);
                let accelerated = if cooldown > 0 {
                    cooldown -= 1;
                    None
                } else {
                    anderson
                        .extrapolate(&cur, mixing)
                        .map(|mut g| {
                            // Without back-action the moments are slaved to
                            // the mean field and are not extrapolated.
                            if cfg.mode == Mode::Bogoliubov {
                                g.corr = step.next.corr.clone();
                            }
                            g
                        })
                        .filter(|g| self.within_depletion_limit(g))
                };
                match accelerated {
                    Some(g) => {
                        fallback = Some((plain, progress));
                        g
                    }
                    None => plain,
                }
            } else {
                anderson.clear();
                plain
            };
            // An unstable symmetric state would only leave the
            // symmetric manifold at a geometric rate starting from round-off.
            // The remnants of a symmetry-broken iterate in γ and the moments
            // could pull the seed back, so they are projected out.
            if !step.stable && cur.alpha.norm() < SEED_AMPLITUDE {
                cur.alpha = Complex64::new(SEED_AMPLITUDE, 0.0);
                cur.project_even();
            }
        }
    }
}

impl Solver {
    /// Mixes like [`mix`] but shortens the step while the mixed moments
    /// would deplete the condensate below the allowed floor. Near a marginal
    /// mode a single undamped update can overshoot the depletion by orders
    /// of magnitude.
    fn guarded_mix(&self, old: &Guess, new: &Guess, w: f64) -> Guess {
        if self.config.mode == Mode::Bogoliubov {
            return mix(old, new, w);
        }
        let mut w = w;
        for _ in 0..MAX_STEP_HALVINGS {
            let trial = mix(old, new, w);
            if self.within_depletion_limit(&trial) {
                return trial;
            }
            w *= 0.5;
        }
        let mut trial = mix(old, new, w);
        trial.corr = old.corr.clone();
        trial
    }

    fn within_depletion_limit(&self, g: &Guess) -> bool {
        self.config.mode == Mode::Bogoliubov
            || g.corr.depletion() < (1.0 - 2.0 * MIN_CONDENSATE_FRACTION) * self.params.atom_number
    }
}

const MAX_STEP_HALVINGS: usize = 40;

/// An accelerated step is undone when it raises the residual by this factor
/// or lands on an unstable linearization.
const ACCELERATION_REJECT: f64 = 2.0;

/// Plain-mixing iterations after a rejected accelerated step.
const ACCELERATION_COOLDOWN: usize = 10;

/// Anderson (type II) acceleration of the fixed-point map on the flattened
/// iterate `(α, γ, moments)`.
struct Anderson {
    depth: usize,
    xs: VecDeque<DVector<f64>>,
    gs: VecDeque<DVector<f64>>,
}

impl Anderson {
    fn new(depth: usize) -> Self {
        Anderson {
            depth,
            xs: VecDeque::new(),
            gs: VecDeque::new(),
        }
    }

    fn clear(&mut self) {
        self.xs.clear();
        self.gs.clear();
    }

    /// Records the iterate `x` and its image `fx`.
    fn push(&mut self, x: &Guess, fx: &Guess) {
        if self.depth == 0 {
            return;
        }
        let xv = flatten(x);
        let g = flatten(fx) - &xv;
        self.xs.push_back(xv);
        self.gs.push_back(g);
        if self.xs.len() > self.depth + 1 {
            self.xs.pop_front();
            self.gs.pop_front();
        }
    }

    fn extrapolate(&self, template: &Guess, w: f64) -> Option<Guess> {
        let k = self.xs.len();
        if k < 2 {
            return None;
        }
        let n = self.xs[0].len();
        let mut dx = DMatrix::<f64>::zeros(n, k - 1);
        let mut dg = DMatrix::<f64>::zeros(n, k - 1);
        for j in 0..k - 1 {
            dx.set_column(j, &(&self.xs[j + 1] - &self.xs[j]));
            dg.set_column(j, &(&self.gs[j + 1] - &self.gs[j]));
        }
        let g = &self.gs[k - 1];
        let theta = dg.clone().svd(true, true).solve(g, 1e-12 * g.norm().max(1e-300)).ok()?;
        let next = &self.xs[k - 1] + g * w - (dx + dg * w) * theta;
        next.iter().all(|v| v.is_finite()).then(|| unflatten(&next, template))
    }
}

fn flatten(g: &Guess) -> DVector<f64> {
    let mut v = vec![g.alpha.re, g.alpha.im];
    v.extend(g.gamma.iter().flat_map(|z| [z.re, z.im]));
    v.extend(g.corr.moments.iter().flat_map(|z| [z.re, z.im]));
    DVector::from_vec(v)
}

fn unflatten(v: &DVector<f64>, template: &Guess) -> Guess {
    let m = template.gamma.len();
    let z = |i: usize| Complex64::new(v[2 * i], v[2 * i + 1]);
    let gamma = DVector::from_fn(m, |j, _| z(1 + j)).normalize();
    let mut corr = template.corr.clone();
    for (i, e) in corr.moments.iter_mut().enumerate() {
        *e = z(1 + m + i);
    }
    Guess {
        alpha: z(0),
        gamma,
        corr,
    }
}

fn mix(old: &Guess, new: &Guess, w: f64) -> Guess {
    let gamma = (&old.gamma * Complex64::from(1.0 - w) + &new.gamma * Complex64::from(w)).normalize();
    let mut corr = old.corr.clone();
    corr.moments = &old.corr.moments * Complex64::from(1.0 - w) + &new.corr.moments * Complex64::from(w);
    Guess {
        alpha: old.alpha * (1.0 - w) + new.alpha * w,
        gamma,
        corr,
    }
}

/// Solves for the steady state from the configured initial guess.
pub fn solve(params: &ModelParams, config: &SolverConfig) -> Result<SteadyState> {
    let solver = Solver::new(*params, *config)?;
    finish(solver.run(solver.initial_guess())?)
}

/// Solves for the steady state starting from `start` instead of the
/// configured initial guess.
pub fn solve_from(params: &ModelParams, config: &SolverConfig, start: Guess) -> Result<SteadyState> {
    let solver = Solver::new(*params, *config)?;
    finish(solver.run(start)?)
}

/// Turns a non-converged run into the matching error.
fn finish(s: SteadyState) -> Result<SteadyState> {
    if !s.converged {
        if s.growth_rate() > STABILITY_TOL {
            return Err(Error::Unstable {
                growth: s.growth_rate(),
            });
        }
        return Err(Error::NotConverged {
            iterations: s.iterations,
            residual: s.residual,
        });
    }
    let moments = [
        ("<a^dag a>", s.corr.adag_a()),
        ("<b^dag M2 b>", s.corr.bdag_kernel_b(&s.meanfield.mt2)),
    ];
    for (what, z) in moments {
        if imaginary_residue(z) {
            warn!("converged moment {what} has imaginary part {:e}", z.im);
        }
    }
    if s.mode == Mode::Hfb {
        let r = back_action_vector(&s.params, &s.meanfield, &s.corr)?;
        let residue = s.meanfield.beta.dotc(&r).im;
        if residue.abs() > MU_IMAG_TOL {
            warn!("chemical potential has imaginary residue {residue:e}");
        }
    }
    Ok(s)
}

/// One point of a continuation sweep.
#[derive(Debug, Clone)]
pub struct BranchPoint {
    pub y: f64,
    pub state: Result<SteadyState>,
    /// The warm start from the previous point failed (or there was none to
    /// use) and the point was solved from the configured initial guess.
    pub cold_start: bool,
}

/// Halvings of a continuation step tried before giving up on a warm start.
pub const MAX_CONTINUATION_HALVINGS: usize = 4;

/// Continues the converged state `from` at coupling `y0` to coupling `y1`,
/// halving the step (recursively, `halvings` deep) when the direct warm
/// start fails.
pub fn continue_branch(
    params: &ModelParams,
    config: &SolverConfig,
    (y0, from): (f64, Guess),
    y1: f64,
    halvings: usize,
) -> Result<SteadyState> {
    match solve_from(&params.with_coupling(y1), config, from.clone()) {
        Err(_) if halvings > 0 => {
            let mid = 0.5 * (y0 + y1);
            let s = continue_branch(params, config, (y0, from), mid, halvings - 1)?;
            continue_branch(params, config, (mid, s.guess()), y1, halvings - 1)
        }
        r => r,
    }
}

/// Solves along an ascending grid of nominal couplings, continuing each
/// point from the previous converged state (with step halving) and falling
/// back to a cold start when that fails. Failures are recorded per point;
/// the sweep always completes.
pub fn solve_branch(params: &ModelParams, config: &SolverConfig, y_grid: &[f64]) -> Vec<BranchPoint> {
    let mut out: Vec<BranchPoint> = Vec::with_capacity(y_grid.len());
    let mut previous: Option<(f64, Guess)> = None;
    for &y in y_grid {
        let p = params.with_coupling(y);
        let warm = previous
            .take()
            .map(|start| continue_branch(params, config, start, y, MAX_CONTINUATION_HALVINGS));
        let (state, cold_start) = match warm {
            Some(Ok(s)) => (Ok(s), false),
            _ => (solve(&p, config), true),
        };
        if let Ok(s) = &state {
            previous = Some((y, s.guess()));
        }
        out.push(BranchPoint {
            y,
            state,
            cold_start,
        });
    }
    out
}
