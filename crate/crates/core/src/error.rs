use thiserror::Error;

/// Errors raised by the analysis pipeline.
///
/// The variants map onto the command-line exit codes: usage errors are the
/// caller's fault, data errors point at the input, model and convergence
/// errors come out of the fitting routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("usage error: {0}")]
    Usage(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("data error at line {line}: {message}")]
    Row { line: u64, message: String },

    #[error("model error: {0}")]
    Model(String),

    #[error("convergence error: {0}")]
    Convergence(String),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn model(msg: impl Into<String>) -> Self {
        Error::Model(msg.into())
    }

    pub(crate) fn convergence(msg: impl Into<String>) -> Self {
        Error::Convergence(msg.into())
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Data(_) | Error::Row { .. } => 2,
            Error::Model(_) | Error::Convergence(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
