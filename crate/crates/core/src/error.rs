use thiserror::Error;

/// Errors produced by the statistical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A weighted information matrix was rank-deficient even after the ridge
    /// guard. Callers monitoring a stream defer the checkpoint.
    #[error("singular information matrix while {context}")]
    SingularInformation { context: &'static str },

    /// The control-arm fit hit its iteration cap or diverged (e.g. perfect
    /// separation in a logistic fit). Callers defer the checkpoint.
    #[error("fit did not converge after {iterations} iterations (max |score| = {max_abs_score:.3e})")]
    NoConvergence {
        iterations: usize,
        max_abs_score: f64,
    },

    /// Below the minimum per-arm sample gate; the checkpoint is deferred.
    #[error("insufficient samples: need {needed} per arm, have n1={n1}, n0={n0}")]
    InsufficientSamples { needed: usize, n1: usize, n0: usize },

    #[error("value {value} outside domain while {context}")]
    Domain { value: f64, context: &'static str },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid observation at position {position}: {reason}")]
    InvalidObservation { position: usize, reason: String },
}

impl Error {
    /// Whether a monitoring loop should defer the current checkpoint and
    /// carry on, rather than abort the run.
    pub fn is_deferrable(&self) -> bool {
        matches!(
            self,
            Error::SingularInformation { .. }
                | Error::NoConvergence { .. }
                | Error::InsufficientSamples { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
