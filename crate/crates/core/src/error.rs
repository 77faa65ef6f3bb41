use thiserror::Error;

/// Errors raised by the solver stack.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("no critical point: shifted cavity detuning {shifted_detuning} must be positive")]
    NoTransition { shifted_detuning: f64 },

    #[error("eigensolver did not converge")]
    EigenSolver,

    #[error("defective matrix: bi-orthonormalization residual {residual:e}")]
    DefectiveMatrix { residual: f64 },

    #[error("marginal mode: |omega_k + omega_l| = {gap:e} with noise weight {weight:e}")]
    MarginalMode { gap: f64, weight: f64 },

    #[error("condensate depleted: depletion {depletion} of {atoms} atoms")]
    CondensateDepleted { depletion: f64, atoms: f64 },

    #[error("unstable fixed point: linearized growth rate {growth:e}")]
    Unstable { growth: f64 },

    #[error("not converged after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("no interior extremum in bracket [{lo}, {hi}]")]
    NoInteriorExtremum { lo: f64, hi: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("branch crossing ambiguity at y = {y}")]
    BranchAmbiguity { y: f64 },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
