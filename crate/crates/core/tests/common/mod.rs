//! Checks shared by the property suite and the acceptance report. Each
//! returns the worst value it measured so callers can compare it with the
//! pinned tolerance.

#![allow(dead_code)]

use dicke_hfb::analysis::{fit_power_law, sweep, Quantity};
use dicke_hfb::observables::{covariance_matrix, symplectic_eigenvalues};
use dicke_hfb::{solve, ModelParams, SolverConfig, SteadyState};
use num_complex::Complex64;

pub const BIORTHONORMALITY_TOL: f64 = 1e-10;
pub const PAIRING_TOL: f64 = 1e-9;
pub const VACUUM_TOL: f64 = 1e-12;
pub const NORMALIZATION_TOL: f64 = 1e-12;
pub const COMMUTATOR_TOL: f64 = 1e-8;
pub const PHYSICALITY_SLACK: f64 = 1e-6;
pub const FIT_TOL: f64 = 1e-10;

/// Converged states of the reference parameters across the transition and
/// a few detuned, light-shifted systems.
pub fn sample_states() -> Vec<SteadyState> {
    let mut states = Vec::new();
    for n in [1e2, 1e3, 1e4] {
        for y in [0.5, 1.0, 1.5, 1.9, 2.4, 3.0] {
            let p = ModelParams {
                atom_number: n,
                ..Default::default()
            };
            states.push(solve(&p.with_coupling(y), &SolverConfig::default()).unwrap());
        }
    }
    for (detuning, kappa, u, y) in [(-1.5, 1.0, 1e-4, 0.8), (-3.0, 0.5, -2e-4, 3.5), (-2.5, 2.5, 0.0, 4.0)] {
        let p = ModelParams {
            atom_number: 2000.0,
            cavity_detuning: detuning,
            loss_rate: kappa,
            light_shift: u,
            ..Default::default()
        };
        states.push(solve(&p.with_coupling(y), &SolverConfig::default()).unwrap());
    }
    states
}

pub fn biorthonormality(state: &SteadyState) -> f64 {
    state.eig.biorthonormality_residual()
}

/// Distance of every ω from the nearest −ω* in the spectrum.
pub fn pairing(state: &SteadyState) -> f64 {
    let w = &state.eig.omegas;
    w.iter()
        .map(|a| w.iter().map(|b| (b + a.conj()).norm()).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

/// `(|⟨ã†ã⟩|, |⟨ãã†⟩ − 1|)` without pump.
pub fn vacuum() -> (f64, f64) {
    let p = ModelParams {
        pump_amplitude: 0.0,
        ..Default::default()
    };
    let s = solve(&p, &SolverConfig::default()).unwrap();
    (s.corr.adag_a().norm(), (s.corr.a_adag() - 1.0).norm())
}

/// `(|β†β − 1|, max|γ − Oβ|)`.
pub fn normalization(state: &SteadyState) -> (f64, f64) {
    let mf = &state.meanfield;
    let norm = (mf.beta.norm_squared() - 1.0).abs();
    let o = mf.transform.map(Complex64::from);
    let gap = (&mf.gamma - o * &mf.beta).iter().map(|z| z.norm()).fold(0.0, f64::max);
    (norm, gap)
}

/// |⟨ãã†⟩ − ⟨ã†ã⟩ − 1|.
pub fn commutator(state: &SteadyState) -> f64 {
    (state.corr.a_adag() - state.corr.adag_a() - 1.0).norm()
}

/// Smallest symplectic eigenvalue of the covariance matrix.
pub fn smallest_symplectic(state: &SteadyState) -> f64 {
    symplectic_eigenvalues(&covariance_matrix(&state.corr))
        .unwrap()
        .into_iter()
        .fold(f64::INFINITY, f64::min)
}

/// Worst relative error of the recovered exponent and prefactor on exact
/// synthetic power laws.
pub fn power_law_fit() -> f64 {
    let mut worst: f64 = 0.0;
    for (c, tau) in [(3.0, 0.41), (0.2, -0.44), (17.0, 1.5), (1.0, -0.39)] {
        let x = [1e3, 1e4, 1e5, 3e5];
        let v: Vec<f64> = x.iter().map(|x: &f64| c * x.powf(tau)).collect();
        let f = fit_power_law(&x, &v).unwrap();
        worst = worst.max(((f.exponent - tau) / tau).abs()).max(((f.prefactor - c) / c).abs());
    }
    worst
}

/// Runs the same sweep twice and reports whether every recorded quantity
/// agrees bit for bit.
pub fn reruns_identical() -> bool {
    let p = ModelParams {
        atom_number: 1e3,
        ..Default::default()
    };
    let grid: Vec<f64> = (0..12).map(|i| 1.7 + 0.05 * i as f64).collect();
    let a = sweep(&p, &SolverConfig::default(), &grid).unwrap();
    let b = sweep(&p, &SolverConfig::default(), &grid).unwrap();
    a.points.iter().zip(&b.points).all(|(x, y)| {
        x.observables == y.observables
            && x.spectrum == y.spectrum
            && Quantity::ALL.iter().all(|q| {
                q.of_point(x).map(f64::to_bits) == q.of_point(y).map(f64::to_bits)
            })
    })
}
