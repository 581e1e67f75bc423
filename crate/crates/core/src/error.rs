use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// An input value violates a documented range or precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// A configuration is internally inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: {reason} (try a smaller learning rate)")]
    Divergence { epoch: usize, reason: String },

    /// A scan arrived with a timestamp earlier than the tracker clock.
    #[error("out-of-sequence scan at t={scan_t} (tracker clock at t={clock_t})")]
    OutOfSequence { scan_t: f64, clock_t: f64 },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
