//! Physical quantities derived from a steady state: photon numbers, mode
//! populations, the excitation spectrum, the Fano factor and the
//! atom-cavity logarithmic negativity.

use log::warn;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fluctuations::{CorrelationTable, Layout};
use crate::scf::SteadyState;

/// Total photon number below which the Fano factor is reported as the
/// coherent-vacuum limit.
pub const FANO_VACUUM: f64 = 1e-12;

/// Real parts below this (relative to the spectral scale) count as zero when
/// picking one member of each `(ω, −ω*)` pair.
pub const PAIR_TOL: f64 = 1e-9;

/// Two branch assignments closer than this are indistinguishable by
/// frequency alone.
pub const TRACKING_TOL: f64 = 1e-8;

/// Slack on the uncertainty bound ν ≥ 1/2 before a warning is logged.
pub const PHYSICALITY_SLACK: f64 = 1e-6;

/// Per-state observables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableSet {
    /// N_c|α|².
    pub coherent_photons: f64,
    /// ⟨ã†ã⟩.
    pub incoherent_photons: f64,
    /// |γ_n|² per Fourier mode.
    pub condensate_populations: Vec<f64>,
    /// ⟨c̃_n†c̃_n⟩ per Fourier mode.
    pub depletion_populations: Vec<f64>,
    /// One member of each `(ω, −ω*)` pair, sorted by real part.
    pub frequencies: Vec<Complex64>,
    pub fano: f64,
    pub fano_vacuum_limit: bool,
    pub log_negativity: f64,
}

/// Evaluates every per-state observable.
pub fn observables(state: &SteadyState) -> Result<ObservableSet> {
    let (coherent, incoherent) = photon_split(state);
    let fano = fano_factor(state);
    let c = covariance_matrix(&state.corr);
    let nu = symplectic_eigenvalues(&c)?;
    if let Some(min) = nu.iter().copied().reduce(f64::min) {
        if min < 0.5 - PHYSICALITY_SLACK {
            warn!("unphysical covariance: smallest symplectic eigenvalue {min}");
        }
    }
    Ok(ObservableSet {
        coherent_photons: coherent,
        incoherent_photons: incoherent,
        condensate_populations: condensate_populations(state).iter().copied().collect(),
        depletion_populations: depletion_populations(state).iter().copied().collect(),
        frequencies: positive_frequencies(state),
        fano: fano.value,
        fano_vacuum_limit: fano.vacuum_limit,
        log_negativity: logarithmic_negativity(&c)?,
    })
}

/// `(N_c|α|², ⟨ã†ã⟩)`; the total photon number is their sum.
pub fn photon_split(state: &SteadyState) -> (f64, f64) {
    let mf = &state.meanfield;
    (mf.condensate * mf.alpha.norm_sqr(), state.corr.adag_a().re)
}

/// |γ_n|².
pub fn condensate_populations(state: &SteadyState) -> DVector<f64> {
    state.meanfield.gamma.map(|z| z.norm_sqr())
}

/// `⟨c̃_n†c̃_n⟩ = Σ_jk O_nj O_nk ⟨b̃_j†b̃_k⟩` for each Fourier index n.
pub fn depletion_populations(state: &SteadyState) -> DVector<f64> {
    let o = &state.meanfield.transform;
    let m = o.nrows();
    DVector::from_fn(m, |n, _| {
        let mut acc = 0.0;
        for j in 0..m {
            for k in 0..m {
                acc += o[(n, j)] * o[(n, k)] * state.corr.bdag_b(j, k).re;
            }
        }
        acc
    })
}

/// Indices of the eigenpairs that belong to the regularized condensate mode.
fn zero_mode_columns(state: &SteadyState) -> Vec<usize> {
    let Some(j) = state.system.zero_mode else {
        return Vec::new();
    };
    let l = state.system.layout;
    let r = &state.eig.right;
    (0..r.ncols())
        .filter(|&c| {
            let col = r.column(c);
            let on = col[l.b(j)].norm_sqr() + col[l.bd(j)].norm_sqr();
            on > 0.5 * col.norm_squared()
        })
        .collect()
}

/// Excitation frequencies with the zero mode removed and one member of each
/// `(ω, −ω*)` pair kept: those with positive real part, plus every purely
/// imaginary one (each is its own partner). Sorted by real part, then by
/// imaginary part.
pub fn positive_frequencies(state: &SteadyState) -> Vec<Complex64> {
    positive_modes(state).into_iter().map(|(w, _)| w).collect()
}

/// Frequencies as in [`positive_frequencies`] with their right eigenvectors
/// expressed in the Fourier basis and normalized.
fn positive_modes(state: &SteadyState) -> Vec<(Complex64, DVector<Complex64>)> {
    let skip = zero_mode_columns(state);
    let eig = &state.eig;
    let scale = eig.omegas.iter().map(|w| w.norm()).fold(1.0, f64::max);
    let layout = state.system.layout;
    let o = &state.meanfield.transform;
    let mut out: Vec<(Complex64, DVector<Complex64>)> = (0..eig.len())
        .filter(|c| !skip.contains(c))
        .filter(|&c| eig.omegas[c].re >= -PAIR_TOL * scale)
        .map(|c| {
            let w = eig.omegas[c];
            let w = if w.re.abs() <= PAIR_TOL * scale {
                Complex64::new(0.0, w.im)
            } else {
                w
            };
            (w, fourier_vector(&eig.right.column(c).into_owned(), o, layout))
        })
        .collect();
    out.sort_by(|a, b| a.0.re.total_cmp(&b.0.re).then(a.0.im.total_cmp(&b.0.im)));
    out
}

fn fourier_vector(r: &DVector<Complex64>, o: &DMatrix<f64>, layout: Layout) -> DVector<Complex64> {
    let m = layout.modes;
    let mut v = r.clone();
    for block in [2, 2 + m] {
        for n in 0..m {
            v[block + n] = (0..m).map(|j| o[(n, j)] * r[block + j]).sum();
        }
    }
    v.normalize()
}

/// The soft mode of a single state: among the frequencies other than the two
/// with the largest real parts (cavity and ω₂), the one with the smallest
/// |Im ω|.
pub fn soft_mode(state: &SteadyState) -> Option<Complex64> {
    let w = positive_frequencies(state);
    if w.len() < 3 {
        return None;
    }
    w[..w.len() - 2]
        .iter()
        .copied()
        .min_by(|a, b| a.im.abs().total_cmp(&b.im.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchLabel {
    /// Branch starting from ω_R, the soft mode c̃₁.
    Omega1,
    /// Branch starting from −Δ_C, the cavity mode.
    Cavity,
    /// Branch starting from 4ω_R, the motional mode c̃₂.
    Omega2,
}

/// Labelled frequencies at one sweep point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPoint {
    pub y: f64,
    pub omega1: Complex64,
    pub cavity: Complex64,
    pub omega2: Complex64,
}

impl SpectrumPoint {
    pub fn get(&self, label: BranchLabel) -> Complex64 {
        match label {
            BranchLabel::Omega1 => self.omega1,
            BranchLabel::Cavity => self.cavity,
            BranchLabel::Omega2 => self.omega2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub points: Vec<SpectrumPoint>,
    /// Smallest interior local minimum of |Im ω₁| along the sweep (the
    /// global minimum if there is none; ω₁ is undamped at y = 0).
    pub min_abs_im_omega1: f64,
    /// Location of that minimum.
    pub y_min: f64,
}

/// Labels the excitation branches along a y-ordered sequence of states.
///
/// At the first point the two frequencies with the largest real parts are the
/// cavity and ω₂ branches (at y = 0 they start from −Δ_C and 4ω_R); the rest
/// belongs to the soft branch, which splits into purely imaginary pairs
/// around the critical point. Later points continue the cavity and ω₂
/// branches by nearest-neighbour matching in the complex plane, falling back
/// to eigenvector overlap when two assignments are equally close. ω₁ is the
/// remaining frequency of smallest |Im ω|.
pub fn excitation_spectrum(points: &[(f64, &SteadyState)]) -> Result<Spectrum> {
    if points.is_empty() {
        return Err(Error::InsufficientData("empty spectrum sweep".into()));
    }
    let mut out = Vec::with_capacity(points.len());
    let mut prev: Option<[(Complex64, DVector<Complex64>); 2]> = None;
    for &(y, state) in points {
        let modes = positive_modes(state);
        if modes.len() < 3 {
            return Err(Error::InsufficientData(format!(
                "only {} excitation frequencies at y = {y}",
                modes.len()
            )));
        }
        let (ic, i2) = match &prev {
            None => (modes.len() - 2, modes.len() - 1),
            Some(p) => track(&modes, p, y)?,
        };
        let omega1 = modes
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != ic && *i != i2)
            .map(|(_, m)| m.0)
            .min_by(|a, b| a.im.abs().total_cmp(&b.im.abs()))
            .expect("at least one soft candidate");
        out.push(SpectrumPoint {
            y,
            omega1,
            cavity: modes[ic].0,
            omega2: modes[i2].0,
        });
        prev = Some([modes[ic].clone(), modes[i2].clone()]);
    }
    let im = |k: usize| out[k].omega1.im.abs();
    let interior: Vec<usize> = (1..out.len().saturating_sub(1))
        .filter(|&k| im(k) <= im(k - 1) && im(k) <= im(k + 1))
        .collect();
    let candidates: Vec<usize> = if interior.is_empty() {
        (0..out.len()).collect()
    } else {
        interior
    };
    let best = &out[candidates
        .into_iter()
        .min_by(|&a, &b| im(a).total_cmp(&im(b)))
        .expect("non-empty")];
    Ok(Spectrum {
        min_abs_im_omega1: best.omega1.im.abs(),
        y_min: best.y,
        points: out,
    })
}

/// Assigns the cavity and ω₂ branches at a new point.
fn track(
    modes: &[(Complex64, DVector<Complex64>)],
    prev: &[(Complex64, DVector<Complex64>); 2],
    y: f64,
) -> Result<(usize, usize)> {
    let mut options: Vec<(f64, f64, usize, usize)> = Vec::new();
    for a in 0..modes.len() {
        for b in 0..modes.len() {
            if a == b {
                continue;
            }
            let dist = (modes[a].0 - prev[0].0).norm() + (modes[b].0 - prev[1].0).norm();
            let overlap = modes[a].1.dotc(&prev[0].1).norm() + modes[b].1.dotc(&prev[1].1).norm();
            options.push((dist, overlap, a, b));
        }
    }
    options.sort_by(|p, q| p.0.total_cmp(&q.0));
    let scale = prev[1].0.norm().max(1.0);
    let ties: Vec<_> = options
        .iter()
        .filter(|o| o.0 - options[0].0 <= TRACKING_TOL * scale)
        .filter(|o| {
            (modes[o.2].0 - modes[options[0].2].0).norm() > TRACKING_TOL * scale
                || (modes[o.3].0 - modes[options[0].3].0).norm() > TRACKING_TOL * scale
        })
        .collect();
    if ties.is_empty() {
        return Ok((options[0].2, options[0].3));
    }
    let first = &options[0];
    let rival = ties
        .iter()
        .map(|o| o.1)
        .fold(f64::NEG_INFINITY, f64::max);
    if (first.1 - rival).abs() <= TRACKING_TOL {
        return Err(Error::BranchAmbiguity { y });
    }
    if first.1 > rival {
        Ok((first.2, first.3))
    } else {
        let best = ties
            .iter()
            .max_by(|p, q| p.1.total_cmp(&q.1))
            .expect("non-empty");
        Ok((best.2, best.3))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fano {
    pub value: f64,
    /// No photons at all: the ratio is replaced by its coherent-state value 1.
    pub vacuum_limit: bool,
}

/// Fano factor `(⟨n²⟩ − ⟨n⟩²)/⟨n⟩` of the cavity photon number
/// `n = (A* + ã†)(A + ã)` with `A = √N_c α`, evaluated for the displaced
/// Gaussian fluctuation state (Wick factorization of the fourth moments).
pub fn fano_factor(state: &SteadyState) -> Fano {
    let mf = &state.meanfield;
    let amp = mf.alpha * mf.condensate.sqrt();
    fano_from_moments(amp, state.corr.adag_a().re, state.corr.a_a())
}

/// Fano factor for coherent amplitude `amp`, `⟨ã†ã⟩ = n` and `⟨ãã⟩ = s`.
pub fn fano_from_moments(amp: Complex64, n: f64, s: Complex64) -> Fano {
    let mean = amp.norm_sqr() + n;
    if mean < FANO_VACUUM {
        return Fano {
            value: 1.0,
            vacuum_limit: true,
        };
    }
    let linear = 2.0 * (amp.conj() * amp.conj() * s).re + amp.norm_sqr() * (2.0 * n + 1.0);
    let quadratic = s.norm_sqr() + n * (n + 1.0);
    Fano {
        value: (linear + quadratic) / mean,
        vacuum_limit: false,
    }
}

/// Leading-order Fano factor `1 + 2⟨ã†ã⟩ + 2Re(α*²⟨ãã⟩)/|α|²`, defined
/// only away from the normal phase.
pub fn fano_truncated(state: &SteadyState) -> Option<f64> {
    let a = state.meanfield.alpha;
    if a.norm_sqr() == 0.0 {
        return None;
    }
    let n = state.corr.adag_a().re;
    Some(1.0 + 2.0 * n + 2.0 * (a.conj() * a.conj() * state.corr.a_a()).re / a.norm_sqr())
}

/// Symmetrically ordered covariance matrix `C_jk = ½⟨{q_j, q_k}⟩` over the
/// quadratures `(x, p, X₀, P₀, X₁, P₁, ...)` of the cavity and the atomic
/// modes of `corr`.
///
/// Only the normally ordered moments `⟨o†o⟩` and `⟨oo⟩` are read from the
/// table; the anti-normally ordered ones follow from the commutator. Modes
/// that never receive noise (the regularized zero mode, decoupled modes)
/// therefore enter as vacuum.
pub fn covariance_matrix(corr: &CorrelationTable) -> DMatrix<f64> {
    let l = corr.layout;
    let m = l.modes + 1;
    let ann = |i: usize| if i == 0 { l.a() } else { l.b(i - 1) };
    let cre = |i: usize| if i == 0 { l.ad() } else { l.bd(i - 1) };
    // g over v = (o_0..o_m, o_0†..o_m†)
    let mut g = DMatrix::<Complex64>::zeros(2 * m, 2 * m);
    for i in 0..m {
        for j in 0..m {
            let nij = corr.get(cre(i), ann(j));
            g[(m + i, j)] = nij;
            g[(i, j)] = corr.get(ann(i), ann(j));
            g[(m + i, m + j)] = corr.get(cre(i), cre(j));
            let delta = if i == j { 1.0 } else { 0.0 };
            g[(i, m + j)] = corr.get(cre(j), ann(i)) + delta;
        }
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut t = DMatrix::<Complex64>::zeros(2 * m, 2 * m);
    for i in 0..m {
        // x = (o + o†)/√2, p = i(o† − o)/√2
        t[(2 * i, i)] = s.into();
        t[(2 * i, m + i)] = s.into();
        t[(2 * i + 1, i)] = Complex64::new(0.0, -s);
        t[(2 * i + 1, m + i)] = Complex64::new(0.0, s);
    }
    let q = &t * g * t.transpose();
    let c = (&q + q.transpose()).map(|z| 0.5 * z.re);
    (&c + c.transpose()) * 0.5
}

/// C^{T_A} for the cavity-versus-atoms bipartition: p → −p.
pub fn partial_transpose(c: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = c.clone();
    for k in 0..c.ncols() {
        if k != 1 {
            out[(1, k)] = -out[(1, k)];
            out[(k, 1)] = -out[(k, 1)];
        }
    }
    out
}

fn check_covariance(c: &DMatrix<f64>) -> Result<()> {
    let n = c.nrows();
    if n != c.ncols() || n % 2 != 0 {
        return Err(Error::invalid("covariance", "must be square of even size"));
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("covariance", "non-finite entry"));
    }
    let scale = c.iter().map(|v| v.abs()).fold(1.0, f64::max);
    if (c - c.transpose()).amax() > 1e-10 * scale {
        return Err(Error::invalid("covariance", "not symmetric"));
    }
    Ok(())
}

/// Symplectic eigenvalues: moduli of the eigenvalues of `iΩC`, which come in
/// `±ν` pairs; one value per pair, ascending.
pub fn symplectic_eigenvalues(c: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_covariance(c)?;
    let n = c.nrows();
    let mut omega = DMatrix::<f64>::zeros(n, n);
    for k in 0..n / 2 {
        omega[(2 * k, 2 * k + 1)] = 1.0;
        omega[(2 * k + 1, 2 * k)] = -1.0;
    }
    let ev = (omega * c).complex_eigenvalues();
    let mut nu: Vec<f64> = ev.iter().map(|z| z.norm()).collect();
    nu.sort_by(f64::total_cmp);
    Ok(nu.chunks(2).map(|p| 0.5 * (p[0] + p[1])).collect())
}

/// Logarithmic negativity `E_N = Σ_j max(0, −ln 2ν̃_j)` over the symplectic
/// eigenvalues of the partially transposed covariance matrix.
pub fn logarithmic_negativity(c: &DMatrix<f64>) -> Result<f64> {
    let nu = symplectic_eigenvalues(&partial_transpose(c))?;
    Ok(nu
        .iter()
        .filter(|&&v| v < 0.5)
        .map(|&v| -(2.0 * v).ln())
        .sum())
}
