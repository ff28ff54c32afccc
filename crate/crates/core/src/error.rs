use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("generator has negative off-diagonal entry L[{0}][{1}]")]
    NegativeOffDiagonal(usize, usize),

    #[error("generator is not irreducible (positive-entry digraph is not strongly connected)")]
    NotIrreducible,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid measure space: {0}")]
    InvalidMeasure(String),

    #[error("alpha = {alpha} is not above the spectral bound {bound}")]
    AlphaNotAboveSpectralBound { alpha: f64, bound: f64 },

    #[error("spectral bound {0} is not negative")]
    SpectralBoundNotNegative(f64),

    #[error("spectral bound {0} is positive; apply the kappa shift first")]
    PositiveSpectralBound(f64),

    #[error("generator is not sub-Markovian (row {row} sums to {sum})")]
    NotSubMarkovian { row: usize, sum: f64 },

    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),

    #[error("negative argument y = {0}")]
    NegativeArgument(f64),

    #[error("state index {index} out of range for {n} states")]
    StateOutOfRange { index: usize, n: usize },

    #[error("invalid nonlinearity: {0}")]
    InvalidNonlinearity(String),

    #[error("no lower-slope constant available for delta = {0}")]
    MissingLowerSlopeBound(f64),

    #[error("bracket is invalid: {0}")]
    BracketInvalid(String),

    #[error("criterion failed: lambda1(a0) = {lambda1_a0}, lambda1(a_inf) = {lambda1_ainf}")]
    CriterionFailed {
        lambda1_a0: String,
        lambda1_ainf: String,
    },

    #[error("diverging branch: ||u_k|| = {norm} exceeds ceiling at k = {k}")]
    DivergingBranch { k: f64, norm: f64 },

    #[error("eigenfunction ratio max/min = {0:e} exceeds conditioning limit")]
    IllConditioned(f64),

    #[error("residual {residual:e} exceeds tolerance {tolerance:e}")]
    ResidualTooLarge { residual: f64, tolerance: f64 },

    #[error("precondition unverified: {0}")]
    PreconditionUnverified(String),

    #[error("f(y)/y is not strictly decreasing at state {state}: h({y_lo}) - h({y_hi}) = {diff:e}")]
    MonotonicityNotStrict {
        state: usize,
        y_lo: f64,
        y_hi: f64,
        diff: f64,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
