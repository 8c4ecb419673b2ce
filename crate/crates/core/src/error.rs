use thiserror::Error;

/// Errors raised by the engine and its supporting modules.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CeError {
    /// Parameters violate a family or config invariant.
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// An outcome lies outside the support of the law.
    #[error("outcome outside support: {0}")]
    Domain(String),

    /// Sampling a stopping time would not terminate within the length cap.
    #[error("non-termination guard: {0}")]
    NonTermination(String),

    /// A weighted update had no positive mass to fit.
    #[error("update failed: {0}")]
    Update(String),

    /// Caller broke an operation contract (shape mismatch, negative weight, wrong problem kind).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Selection produced no usable weights.
    #[error("selection failed: {0}")]
    Selection(String),

    /// Rejection sampling exceeded its retry cap.
    #[error("rejection cap exceeded after {0} attempts")]
    RejectionCap(u64),

    /// A ratio against a zero oracle gain was requested.
    #[error("undefined ratio: oracle gain is zero")]
    UndefinedRatio,

    /// Malformed experiment or problem description.
    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for CeError {
    fn from(e: std::io::Error) -> Self {
        CeError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CeError {
    fn from(e: serde_json::Error) -> Self {
        CeError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CeError>;
