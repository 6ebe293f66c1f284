use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violates an operation's precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Problem data do not satisfy the hypotheses a verifier relies on.
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    /// Two objects that must share a grid or a driving noise do not.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// The problem fails a stability or coercivity guard.
    #[error("unstable problem: {0}")]
    Unstable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Shorthand for building an [`Error::InvalidInput`].
pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
