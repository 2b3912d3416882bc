use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch at (k={k}, i={i}): {detail}")]
    DimensionMismatch { k: usize, i: usize, detail: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("transition matrix row {row} sums to {sum} (must be 1 within 1e-9)")]
    NotStochastic { row: usize, sum: f64 },

    #[error("transition probability p[{row}][{col}] = {value} lies outside [0, 1]")]
    InvalidProbability { row: usize, col: usize, value: f64 },

    #[error("mode index {index} out of range (number of modes is {modes})")]
    ModeOutOfRange { index: usize, modes: usize },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("iteration did not converge after {iterations} iterations (best estimate {estimate})")]
    NonConvergence { iterations: usize, estimate: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("matrix is numerically singular (min eigenvalue {min_eigenvalue:e})")]
    NearlySingular { min_eigenvalue: f64 },

    #[error("inequality violated at (k={k}, i={i}): min eigenvalue {residual:e}")]
    InequalityViolated { k: usize, i: usize, residual: f64 },

    #[error("problem is infeasible: {0}")]
    Infeasible(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("invalid SDP problem: {0}")]
    InvalidProblem(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
