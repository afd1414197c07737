//! Error type shared across the crate.

/// Errors produced by integration, inference, and design routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A vector or matrix had the wrong dimension.
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// The integrator produced a non-finite state.
    #[error("integration diverged: non-finite state at t = {time}")]
    Integration { time: f64 },

    /// Cholesky factorization failed even after jitter escalation.
    #[error("matrix is ill-conditioned: factorization failed at jitter {jitter:.3e}")]
    IllConditioned { jitter: f64 },

    /// The operation is unavailable in the current mode (e.g. no ground-truth
    /// correction present, or non-isotropic noise where isotropic is required).
    #[error("unsupported mode: {0}")]
    Mode(String),

    /// A combinatorial guard was exceeded.
    #[error("problem too large: {0}")]
    Size(String),

    /// The kernel family does not support the requested operation.
    #[error("unsupported kernel: {0}")]
    UnsupportedKernel(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}
