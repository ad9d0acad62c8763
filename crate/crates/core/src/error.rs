use thiserror::Error;

/// Errors raised anywhere in the laboratory.
///
/// Variants split into two families: input validation (bad parameters,
/// malformed grids, dimension mismatches) and numerical failures
/// (non-convergent quadrature, indefinite Gram matrices, degenerate
/// Monte Carlo samples). The CLI maps the first family to exit code 1 and
/// the second to exit code 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("domain error in {op}: {reason}")]
    Domain { op: &'static str, reason: String },

    #[error("{op} is singular at the requested point: {reason}")]
    Singularity { op: &'static str, reason: String },

    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    DimensionMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },

    #[error(
        "quadrature did not converge in {context} after {subdivisions} subdivisions \
         (last estimate {last:e}, previous {previous:e}, error estimate {error:e})"
    )]
    Convergence {
        context: String,
        subdivisions: usize,
        last: f64,
        previous: f64,
        error: f64,
    },

    #[error(
        "truncation length {length} too short: tail bound exp(-{rate}*{length}) = {bound} \
         is not below abs_tol {abs_tol}"
    )]
    Truncation {
        length: f64,
        rate: f64,
        bound: f64,
        abs_tol: f64,
    },

    #[error("Gram matrix is not positive definite after jitter {jitter}: pivot {pivot} at row {row}")]
    Factorization { row: usize, pivot: f64, jitter: f64 },

    #[error("degenerate sample {index}: denominator {denominator} is not positive")]
    DegenerateSample { index: u64, denominator: f64 },

    #[error("need at least {required} samples, got {got}")]
    TooFewSamples { required: usize, got: usize },

    #[error("Gram cache: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for input-validation failures, false for numerical or I/O failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. }
                | Error::Domain { .. }
                | Error::DimensionMismatch { .. }
                | Error::TooFewSamples { .. }
        )
    }

    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
