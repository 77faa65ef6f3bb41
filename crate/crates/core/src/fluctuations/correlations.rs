use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{EigenSystem, Layout};
use crate::error::{Error, Result};

/// Steady-state second moments `⟨v_μ v_ν⟩` of the fluctuation operators.
///
/// The same container is used in the decoupled basis (b̃ modes) and in the
/// Fourier basis (c̃ modes); [`CorrelationTable::rotate`] maps between them.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationTable {
    pub layout: Layout,
    pub moments: DMatrix<Complex64>,
}

impl CorrelationTable {
    pub fn zeros(modes: usize) -> Self {
        let layout = Layout::new(modes);
        CorrelationTable {
            layout,
            moments: DMatrix::zeros(layout.size(), layout.size()),
        }
    }

    pub fn get(&self, mu: usize, nu: usize) -> Complex64 {
        self.moments[(mu, nu)]
    }

    /// ⟨ã†ã⟩
    pub fn adag_a(&self) -> Complex64 {
        self.get(1, 0)
    }

    /// ⟨ãã†⟩
    pub fn a_adag(&self) -> Complex64 {
        self.get(0, 1)
    }

    /// ⟨ãã⟩
    pub fn a_a(&self) -> Complex64 {
        self.get(0, 0)
    }

    /// ⟨b̃_j† b̃_k⟩
    pub fn bdag_b(&self, j: usize, k: usize) -> Complex64 {
        self.get(self.layout.bd(j), self.layout.b(k))
    }

    /// Σ_j Re⟨b̃_j† b̃_j⟩, the number of atoms outside the condensate.
    pub fn depletion(&self) -> f64 {
        (0..self.layout.modes).map(|j| self.bdag_b(j, j).re).sum()
    }

    /// `Σ_jk K_jk ⟨b̃_j† b̃_k⟩` for a real kernel `K`.
    pub fn bdag_kernel_b(&self, kernel: &DMatrix<f64>) -> Complex64 {
        let m = self.layout.modes;
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..m {
            for k in 0..m {
                acc += kernel[(j, k)] * self.bdag_b(j, k);
            }
        }
        acc
    }

    /// Re-expresses the moments after the atomic change of basis
    /// `b_new = Q b_old` (cavity entries unchanged).
    pub fn rotate(&self, q: &DMatrix<f64>) -> Self {
        let m = self.layout.modes;
        let n = self.layout.size();
        let mut t = DMatrix::<Complex64>::zeros(n, n);
        t[(0, 0)] = 1.0.into();
        t[(1, 1)] = 1.0.into();
        for r in 0..m {
            for c in 0..m {
                let v = Complex64::from(q[(r, c)]);
                t[(2 + r, 2 + c)] = v;
                t[(2 + m + r, 2 + m + c)] = v;
            }
        }
        CorrelationTable {
            layout: self.layout,
            moments: &t * &self.moments * t.transpose(),
        }
    }

    /// Largest |Δ| between two tables of the same layout.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.moments
            .iter()
            .zip(other.moments.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.moments.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Largest violation of `⟨v_μ† v_ν⟩ = ⟨v_ν† v_μ⟩*`.
    pub fn hermiticity_residual(&self) -> f64 {
        let l = self.layout;
        let n = l.size();
        let mut worst: f64 = 0.0;
        for mu in 0..n {
            for nu in 0..n {
                let lhs = self.get(l.partner(mu), nu);
                let rhs = self.get(l.partner(nu), mu).conj();
                worst = worst.max((lhs - rhs).norm());
            }
        }
        worst
    }
}

/// Serializable snapshot of a table: row-major real and imaginary parts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentsRecord {
    pub modes: usize,
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

impl From<&CorrelationTable> for MomentsRecord {
    fn from(t: &CorrelationTable) -> Self {
        let n = t.layout.size();
        let rows = |f: fn(&Complex64) -> f64| {
            (0..n)
                .map(|r| (0..n).map(|c| f(&t.moments[(r, c)])).collect())
                .collect()
        };
        MomentsRecord {
            modes: t.layout.modes,
            re: rows(|z| z.re),
            im: rows(|z| z.im),
        }
    }
}

/// Smallest `|ω_k + ω_l|` that may carry noise.
pub const MARGINAL_GAP: f64 = 1e-10;

/// Relative noise weight below which a marginal pair is treated as decoupled.
pub const DECOUPLED_WEIGHT: f64 = 1e-8;

/// Evaluates `⟨v_μ v_ν⟩ = Σ_kl W_kl r⁽ᵏ⁾_μ r⁽ˡ⁾_ν / (i(ω_k + ω_l))` with
/// projected noise weights `W_kl = Σ_nj l⁽ᵏ⁾*_n D_nj l⁽ˡ⁾*_j`.
///
/// Pairs without noise weight are skipped, which removes the 0/0 of the
/// regularized zero mode paired with itself. A pair with `|ω_k + ω_l|`
/// below [`MARGINAL_GAP`] is skipped as well when its weight is below
/// [`DECOUPLED_WEIGHT`] relative to the largest weight: such a mode is
/// decoupled from the cavity (both its damping and its noise vanish) and stays
/// in its initial vacuum.
pub fn steady_state_correlations(
    eig: &EigenSystem,
    diffusion: &DMatrix<f64>,
    layout: Layout,
) -> Result<CorrelationTable> {
    let n = eig.len();
    let lbar = eig.left.map(|z| z.conj());
    let d = diffusion.map(Complex64::from);
    let w = lbar.transpose() * d * &lbar;
    let wmax = w.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let cutoff = 1e-14 * wmax;
    let decoupled = DECOUPLED_WEIGHT * wmax;

    let mut kernel = DMatrix::<Complex64>::zeros(n, n);
    for k in 0..n {
        for l in 0..n {
            let weight = w[(k, l)];
            if weight.norm() <= cutoff {
                continue;
            }
            let sum = eig.omegas[k] + eig.omegas[l];
            if sum.norm() < MARGINAL_GAP {
                if weight.norm() <= decoupled {
                    continue;
                }
                return Err(Error::MarginalMode {
                    gap: sum.norm(),
                    weight: weight.norm(),
                });
            }
            kernel[(k, l)] = weight / (Complex64::i() * sum);
        }
    }
    let moments = &eig.right * kernel * eig.right.transpose();
    Ok(CorrelationTable { layout, moments })
}
