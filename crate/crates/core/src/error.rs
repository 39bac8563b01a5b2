use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A parameter or argument lies outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Two objects that must share a probability space or a shape do not.
    #[error("structural error: {0}")]
    Structural(String),

    /// Input weights, probabilities or rosters violate their invariants.
    #[error("validation error: {0}")]
    Validation(String),

    /// The operation is not defined for the given risk measure.
    #[error("unsupported for {measure}: {reason}")]
    Unsupported { measure: String, reason: String },

    /// A problem exceeds a hard size cap.
    #[error("size error: {0}")]
    Size(String),

    /// A precondition of a construction or a theorem is not met.
    #[error("precondition failed: {0}")]
    Precondition(String),

    /// The linear-programming solver failed.
    #[error("solver error: {message} (max residual {residual:.3e})")]
    Solver { message: String, residual: f64 },

    /// An iterative method did not reach its tolerance.
    #[error("numerical error: {message} (best bound {best_bound})")]
    Numerical { message: String, best_bound: f64 },

    /// A result contradicts a proven property; indicates a bug.
    #[error("internal inconsistency: {0}")]
    Inconsistency(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn unsupported(measure: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Unsupported {
            measure: measure.into(),
            reason: reason.into(),
        }
    }
}
