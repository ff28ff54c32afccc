//! Semilinear equations `-Lu = f(x, u)` on finite state spaces.

pub mod calculus;
pub mod config;
pub mod doob;
pub mod error;
pub mod extended;
pub mod feynman_kac;
pub mod linalg;
pub mod nonlinearity;
pub mod random;
pub mod solver;
pub mod spectral;
pub mod state_model;
pub mod stochastic;
pub mod suites;

pub use error::{Error, Result};
pub use extended::{ExtendedReal, Potential};
pub use nonlinearity::{Kind, Nonlinearity, Table};
pub use solver::{solve, SolutionReport, SolveOptions, Status};
pub use spectral::{EigenPair, Side};
pub use state_model::{GeneratorModel, MeasureSpace, ShiftedProblem};
