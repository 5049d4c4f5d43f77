//! Crate-wide error type.

/// Error type for every fallible operation in the core.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes are not broadcast-compatible.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Input outside the mathematical domain of an operation (e.g. log of a
    /// nonpositive value, non-finite logits).
    #[error("domain error: {0}")]
    Domain(String),

    /// A precondition on arguments was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Token id out of vocabulary range or sequence too long for the model.
    #[error("token error: {0}")]
    Token(String),

    /// Dataset construction or consumption failure.
    #[error("data error: {0}")]
    Data(String),

    /// Malformed configuration file or unknown key.
    #[error("config error: {0}")]
    Config(String),

    /// Training aborted because a loss or gradient went non-finite.
    #[error("non-finite {what} at step {step} (batch {batch})")]
    NonFinite {
        what: &'static str,
        step: usize,
        batch: usize,
    },

    /// Malformed checkpoint file.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
