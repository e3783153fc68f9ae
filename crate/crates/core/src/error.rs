use thiserror::Error;

/// Errors surfaced by simulation, filtering, planning and the experiment harness.
#[derive(Debug, Error)]
pub enum SacbpError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("time {t} outside schedule span [{start}, {end}]")]
    OutsideSpan { t: f64, start: f64, end: f64 },

    #[error("control {0:?} outside saturation box")]
    OutsideBox(Vec<f64>),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("covariance not positive definite after jitter repair")]
    NotPositiveDefinite,

    #[error("singular innovation covariance")]
    SingularInnovation,

    #[error("contradictory observation: every posterior weight is zero")]
    ContradictoryObservation,

    #[error("too many rollouts failed ({failed} of {total})")]
    RolloutsFailed { failed: usize, total: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SacbpError>;

pub(crate) fn invalid(msg: impl Into<String>) -> SacbpError {
    SacbpError::InvalidArgument(msg.into())
}
