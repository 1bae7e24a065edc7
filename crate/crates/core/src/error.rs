use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("time must be non-negative, got {0}")]
    NegativeTime(f64),

    #[error("decay rate is singular at t = {0}")]
    Singularity(f64),

    #[error("state lost positivity at t = {time}: minimum eigenvalue {eigenvalue:e}")]
    Positivity { time: f64, eigenvalue: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("point outside bounds: {0}")]
    OutOfBounds(String),

    #[error("episode already finished")]
    EpisodeDone,

    #[error("training diverged at environment step {step}: {reason}")]
    Diverged { step: u64, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by bad user input rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::InvalidParameter(_) | Error::OutOfBounds(_)
        )
    }
}
