//! Run parameters, the Fourier-basis kernel matrices and closed-form
//! derived couplings.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported Fourier cutoff.
pub const MAX_MODE_CUTOFF: usize = 16;

/// Physical constants of one run. Frequencies share a common unit, by
/// default the recoil frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Total atom number N.
    pub atom_number: f64,
    /// Recoil frequency ω_R.
    pub recoil_frequency: f64,
    /// Pump-cavity detuning Δ_C.
    pub cavity_detuning: f64,
    /// Cavity field decay rate κ (photon loss rate is 2κ).
    pub loss_rate: f64,
    /// Single-atom light shift U_0.
    pub light_shift: f64,
    /// Effective transverse pump amplitude η_t.
    pub pump_amplitude: f64,
    /// Highest Fourier mode index kept.
    pub mode_cutoff: usize,
}

impl Default for ModelParams {
    /// The parameter set used throughout the reference figures:
    /// ω_R = 1, Δ_C = −2, κ = 2, U_0 = 0, n_max = 2.
    fn default() -> Self {
        ModelParams {
            atom_number: 1000.0,
            recoil_frequency: 1.0,
            cavity_detuning: -2.0,
            loss_rate: 2.0,
            light_shift: 0.0,
            pump_amplitude: 0.0,
            mode_cutoff: 2,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("atom_number", self.atom_number),
            ("recoil_frequency", self.recoil_frequency),
            ("cavity_detuning", self.cavity_detuning),
            ("loss_rate", self.loss_rate),
            ("light_shift", self.light_shift),
            ("pump_amplitude", self.pump_amplitude),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err(Error::invalid(name, format!("{v} is not finite")));
            }
        }
        if self.atom_number < 2.0 {
            return Err(Error::invalid("atom_number", "must be at least 2"));
        }
        if self.recoil_frequency <= 0.0 {
            return Err(Error::invalid("recoil_frequency", "must be positive"));
        }
        if self.loss_rate < 0.0 {
            return Err(Error::invalid("loss_rate", "must be non-negative"));
        }
        if self.mode_cutoff < 1 || self.mode_cutoff > MAX_MODE_CUTOFF {
            return Err(Error::invalid(
                "mode_cutoff",
                format!("must lie in 1..={MAX_MODE_CUTOFF}"),
            ));
        }
        Ok(())
    }

    /// Number of Fourier modes kept, n_max + 1.
    pub fn mode_count(&self) -> usize {
        self.mode_cutoff + 1
    }

    /// δ_C = −Δ_C + N·U_0/2.
    pub fn shifted_detuning(&self) -> f64 {
        -self.cavity_detuning + 0.5 * self.atom_number * self.light_shift
    }

    /// Nominal coupling √(2N)·η_t, the sweep variable of all y scans.
    pub fn nominal_coupling(&self) -> f64 {
        (2.0 * self.atom_number).sqrt() * self.pump_amplitude
    }

    /// Copy with η_t chosen so that the nominal coupling equals `y`.
    pub fn with_coupling(&self, y: f64) -> Self {
        ModelParams {
            pump_amplitude: y / (2.0 * self.atom_number).sqrt(),
            ..*self
        }
    }

    /// Copy with a different atom number at the same nominal coupling.
    pub fn with_atom_number(&self, n: f64) -> Self {
        let y = self.nominal_coupling();
        ModelParams {
            atom_number: n,
            ..*self
        }
        .with_coupling(y)
    }
}

/// Kernel matrices M⁽⁰⁾, M⁽¹⁾, M⁽²⁾ of the cosine-mode quadratic forms.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrices {
    pub m0: DMatrix<f64>,
    pub m1: DMatrix<f64>,
    pub m2: DMatrix<f64>,
}

impl KernelMatrices {
    pub fn dim(&self) -> usize {
        self.m0.nrows()
    }
}

/// Builds the kernels truncated to Fourier indices `0..=n_max`.
///
/// The matrix elements are overlap integrals of the normalized cosine basis
/// with cos(kx) and cos²(kx); mode 0 carries weight 1/√L instead of √(2/L),
/// which produces the distinct first-row entries.
pub fn build_kernels(n_max: usize) -> Result<KernelMatrices> {
    if n_max < 1 {
        return Err(Error::invalid("mode_cutoff", "must be at least 1"));
    }
    let dim = n_max + 1;
    let sqrt2 = std::f64::consts::SQRT_2;
    let m0 = DMatrix::from_fn(dim, dim, |i, j| if i == j { (i * i) as f64 } else { 0.0 });

    let mut m1 = DMatrix::zeros(dim, dim);
    for n in 0..n_max {
        let v = if n == 0 { 1.0 } else { 1.0 / sqrt2 };
        m1[(n, n + 1)] = v;
        m1[(n + 1, n)] = v;
    }

    let mut m2 = DMatrix::zeros(dim, dim);
    for n in 0..dim {
        m2[(n, n)] = if n == 1 { 3.0 } else { 2.0 };
    }
    for n in 0..dim.saturating_sub(2) {
        let v = if n == 0 { sqrt2 } else { 1.0 };
        m2[(n, n + 2)] = v;
        m2[(n + 2, n)] = v;
    }

    Ok(KernelMatrices { m0, m1, m2 })
}

/// Effective couplings `(y, u)` = (√(2N_c)·η_t, N_c·U_0/4).
pub fn couplings(params: &ModelParams, condensate: f64) -> Result<(f64, f64)> {
    if !(condensate > 0.0) {
        return Err(Error::invalid(
            "condensate",
            format!("condensed atom number {condensate} must be positive"),
        ));
    }
    let y = (2.0 * condensate).sqrt() * params.pump_amplitude;
    let u = 0.25 * condensate * params.light_shift;
    Ok((y, u))
}

/// Thermodynamic-limit critical coupling y_c = √(ω_R(δ_C² + κ²)/δ_C).
pub fn critical_coupling(params: &ModelParams) -> Result<f64> {
    let delta = params.shifted_detuning();
    if !(delta > 0.0) {
        return Err(Error::NoTransition {
            shifted_detuning: delta,
        });
    }
    let kappa = params.loss_rate;
    Ok((params.recoil_frequency * (delta * delta + kappa * kappa) / delta).sqrt())
}
