//! Hartree-Fock-Bogoliubov steady states of a Bose-Einstein condensate in a
//! lossy, transversely pumped cavity (the open-system Dicke model), and the
//! finite-size scaling analysis built on them.

pub mod analysis;
pub mod error;
pub mod fluctuations;
pub mod meanfield;
pub mod model;
pub mod observables;
pub mod scf;

pub use error::{Error, Result};
pub use model::{build_kernels, couplings, critical_coupling, KernelMatrices, ModelParams};
pub use observables::{observables, ObservableSet};
pub use scf::{continue_branch, solve, solve_branch, solve_from, Init, Mode, SolverConfig, SteadyState};
