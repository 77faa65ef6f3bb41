//! Linearized fluctuation dynamics `i dv/dt = F v + i q` around the mean
//! field, its bi-orthogonal eigensystem and the steady-state second moments.
//!
//! The fluctuation vector is ordered `v = (ã, ã†, b̃₀..b̃ₙ, b̃₀†..b̃ₙ†)`.

mod correlations;
mod eigen;

pub use correlations::{steady_state_correlations, CorrelationTable, MomentsRecord};
pub use eigen::{bi_orthogonal_eigensystem, EigenSystem, DEGENERACY_TOL};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::meanfield::MeanFieldState;
use crate::model::{couplings, ModelParams};
use crate::error::Result;

/// Index map of the fluctuation vector for `modes` atomic modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub modes: usize,
}

impl Layout {
    pub fn new(modes: usize) -> Self {
        Layout { modes }
    }
    pub fn size(&self) -> usize {
        2 + 2 * self.modes
    }
    pub const fn a(&self) -> usize {
        0
    }
    pub const fn ad(&self) -> usize {
        1
    }
    pub fn b(&self, j: usize) -> usize {
        2 + j
    }
    pub fn bd(&self, j: usize) -> usize {
        2 + self.modes + j
    }
    /// Index of the Hermitian-conjugate partner of entry `i`.
    pub fn partner(&self, i: usize) -> usize {
        match i {
            0 => 1,
            1 => 0,
            i if i < 2 + self.modes => i + self.modes,
            i => i - self.modes,
        }
    }
}

/// Drift matrix, diffusion matrix and regularized condensate mode.
#[derive(Debug, Clone)]
pub struct FluctuationSystem {
    pub layout: Layout,
    pub drift: DMatrix<Complex64>,
    pub diffusion: DMatrix<f64>,
    /// Decoupled-basis index of the condensate (Goldstone) mode whose rows
    /// and columns are zeroed in `drift`.
    pub zero_mode: Option<usize>,
}

/// Diffusion matrix: the only input noise correlation is ⟨ξ ξ†⟩ = 2κ.
pub fn assemble_diffusion(params: &ModelParams, size: usize) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(size, size);
    d[(0, 1)] = 2.0 * params.loss_rate;
    d
}

/// Index of the mode the condensate predominantly occupies.
pub fn condensate_mode(beta: &DVector<Complex64>) -> usize {
    let mut best = 0;
    for j in 1..beta.len() {
        if beta[j].norm() > beta[best].norm() {
            best = j;
        }
    }
    best
}

/// Assembles `F` from the mean field and the back-action moments `corr`
/// (decoupled basis). Passing an all-zero table gives the Bogoliubov drift.
///
/// With `regularize`, the condensate mode's frequency and couplings are set
/// to zero.
pub fn assemble_drift(
    params: &ModelParams,
    state: &MeanFieldState,
    corr: &CorrelationTable,
    regularize: bool,
) -> Result<FluctuationSystem> {
    let m = state.beta.len();
    let layout = Layout::new(m);
    let n = layout.size();
    let (y, u) = couplings(params, state.condensate)?;
    let inv = 1.0 / state.condensate;
    let i = Complex64::i();
    let alpha = state.alpha;

    let mt1 = state.mt1.map(Complex64::from);
    let mt2 = state.mt2.map(Complex64::from);
    let w1 = &mt1 * &state.beta;
    let w2 = &mt2 * &state.beta;
    let col = |f: &dyn Fn(usize) -> Complex64| DVector::from_fn(m, |j, _| f(j));
    let h_bd_a = &mt2 * col(&|j| corr.get(layout.bd(j), layout.a()));
    let h_b_a = &mt2 * col(&|j| corr.get(layout.b(j), layout.a()));
    let h_ad_b = &mt2 * col(&|j| corr.get(layout.ad(), layout.b(j)));
    let h_a_b = &mt2 * col(&|j| corr.get(layout.a(), layout.b(j)));

    let mut f = DMatrix::<Complex64>::zeros(n, n);
    let (a, ad) = (layout.a(), layout.ad());
    f[(a, a)] = state.omega - i * params.loss_rate;
    for j in 0..m {
        let (b, bd) = (layout.b(j), layout.bd(j));
        f[(a, b)] = u * alpha * w2[j].conj() + 0.5 * y * w1[j].conj() + u * inv * h_bd_a[j];
        f[(a, bd)] = u * alpha * w2[j] + 0.5 * y * w1[j] + u * inv * h_b_a[j];
        f[(b, b)] = Complex64::from(state.lambda[j] - state.mu);
        f[(b, a)] = 0.5 * y * w1[j] + u * alpha.conj() * w2[j] + u * inv * h_ad_b[j];
        f[(b, ad)] = 0.5 * y * w1[j] + u * alpha * w2[j] + u * inv * h_a_b[j];
    }
    // Conjugate rows follow from particle-hole symmetry F[P·, P·] = −F*.
    for r in (0..n).filter(|&r| r == a || (r >= 2 && r < 2 + m)) {
        for c in 0..n {
            let v = -f[(r, c)].conj();
            f[(layout.partner(r), layout.partner(c))] = v;
        }
    }

    let zero_mode = regularize.then(|| condensate_mode(&state.beta));
    if let Some(j) = zero_mode {
        for idx in [layout.b(j), layout.bd(j)] {
            f.row_mut(idx).fill(Complex64::new(0.0, 0.0));
            f.column_mut(idx).fill(Complex64::new(0.0, 0.0));
        }
    }

    Ok(FluctuationSystem {
        layout,
        drift: f,
        diffusion: assemble_diffusion(params, n),
        zero_mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meanfield::{decouple_atomic_modes, MeanFieldState};
    use crate::model::build_kernels;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn state_from(
        params: &ModelParams,
        alpha: Complex64,
        beta_fourier: &[f64],
        mu: f64,
        omega: f64,
        m_offset: f64,
    ) -> MeanFieldState {
        let k = build_kernels(params.mode_cutoff).unwrap();
        let mut mm = k.m0.clone() * params.recoil_frequency;
        mm += &k.m1 * m_offset;
        let dec = decouple_atomic_modes(&mm, &k).unwrap();
        let gamma = DVector::from_iterator(
            beta_fourier.len(),
            beta_fourier.iter().map(|&x| Complex64::from(x)),
        )
        .normalize();
        let beta = dec.transform.transpose().map(Complex64::from) * &gamma;
        MeanFieldState {
            alpha,
            beta,
            gamma,
            condensate: params.atom_number,
            mu,
            omega,
            transform: dec.transform,
            lambda: dec.lambda,
            mt1: dec.mt1,
            mt2: dec.mt2,
        }
    }

    #[test]
    fn diffusion_single_entry() {
        let p = ModelParams::default();
        let d = assemble_diffusion(&p, 8);
        assert_eq!(d[(0, 1)], 4.0);
        assert_eq!(d.iter().filter(|x| **x != 0.0).count(), 1);
        let p0 = ModelParams { loss_rate: 0.0, ..p };
        assert!(assemble_diffusion(&p0, 8).iter().all(|x| *x == 0.0));
        let p2 = ModelParams { loss_rate: 4.0, ..p };
        assert_eq!(assemble_diffusion(&p2, 4)[(0, 1)], 2.0 * d[(0, 1)]);
    }

    #[test]
    fn decoupled_limit_is_diagonal() {
        let p = ModelParams::default();
        let s = state_from(&p, Complex64::new(0.0, 0.0), &[1.0, 0.0, 0.0], 0.0, 2.0, 0.0);
        let sys = assemble_drift(&p, &s, &CorrelationTable::zeros(3), false).unwrap();
        let f = &sys.drift;
        let expect = [
            Complex64::new(2.0, -2.0),
            Complex64::new(-2.0, -2.0),
            0.0.into(),
            1.0.into(),
            4.0.into(),
            0.0.into(),
            (-1.0).into(),
            (-4.0).into(),
        ];
        for r in 0..8 {
            for c in 0..8 {
                let e = if r == c { expect[r] } else { 0.0.into() };
                assert_eq!(f[(r, c)], e, "entry {r},{c}");
            }
        }
    }

    #[test]
    fn normal_phase_couples_only_first_mode() {
        let p = ModelParams::default().with_coupling(1.0);
        let s = state_from(&p, 0.0.into(), &[1.0, 0.0, 0.0], 0.0, 2.0, 0.0);
        let sys = assemble_drift(&p, &s, &CorrelationTable::zeros(3), true).unwrap();
        let l = sys.layout;
        let (y, _) = couplings(&p, p.atom_number).unwrap();
        assert_eq!(sys.zero_mode, Some(0));
        for j in 0..3 {
            let expect = if j == 1 { 0.5 * y } else { 0.0 };
            for c in [l.b(j), l.bd(j)] {
                assert_relative_eq!(sys.drift[(l.a(), c)].re, expect, epsilon = 1e-14);
                assert_eq!(sys.drift[(l.a(), c)].im, 0.0);
            }
            assert_relative_eq!(sys.drift[(l.b(j), l.a())].re, expect, epsilon = 1e-14);
            assert_relative_eq!(sys.drift[(l.bd(j), l.a())].re, -expect, epsilon = 1e-14);
        }
        assert!(sys.drift.row(l.b(0)).iter().all(|z| z.norm() == 0.0));
        assert!(sys.drift.column(l.bd(0)).iter().all(|z| z.norm() == 0.0));
    }

    proptest! {
        #[test]
        fn particle_hole_symmetry(
            re in -1.0f64..1.0, im in -1.0f64..1.0,
            g1 in -1.0f64..1.0, g2 in -1.0f64..1.0,
            y in 0.0f64..3.0, u0 in -0.01f64..0.01,
            seed in proptest::collection::vec(-1.0f64..1.0, 64)
        ) {
            let p = ModelParams { atom_number: 50.0, light_shift: u0, ..Default::default() }
                .with_coupling(y);
            let s = state_from(&p, Complex64::new(re, im), &[1.0, g1, g2], 0.3, 1.7, 0.4);
            let mut corr = CorrelationTable::zeros(3);
            for (k, v) in corr.moments.iter_mut().enumerate() {
                *v = Complex64::new(seed[k], seed[(k + 7) % 64]);
            }
            let sys = assemble_drift(&p, &s, &corr, true).unwrap();
            let l = sys.layout;
            for r in 0..l.size() {
                for c in 0..l.size() {
                    let lhs = sys.drift[(l.partner(r), l.partner(c))];
                    let rhs = -sys.drift[(r, c)].conj();
                    prop_assert!((lhs - rhs).norm() < 1e-14);
                }
            }
        }
    }
}
