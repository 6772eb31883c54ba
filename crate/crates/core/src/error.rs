use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("nonlinear solve did not converge after {iterations} iterations (residual norm {residual_norm:e})")]
    NonConvergence {
        iterations: usize,
        residual_norm: f64,
    },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("weighting matrix is not symmetric positive definite")]
    NotSpd,

    #[error("degenerate basis: {0}")]
    DegenerateBasis(String),

    #[error("model is not quadratic (third-difference defect {defect:e})")]
    NotQuadratic { defect: f64 },

    #[error("sample set error: {0}")]
    Sample(String),

    #[error("nonnegative least squares stopped after {iterations} iterations with relative residual {residual:e}")]
    Nnls { iterations: usize, residual: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),
}

impl Error {
    pub(crate) fn dims(what: &'static str, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            what,
            expected,
            found,
        }
    }
}

/// Fails with [`Error::NonFinite`] naming the first offending index.
pub fn ensure_finite(what: &'static str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { what, index }),
        None => Ok(()),
    }
}
