use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied arguments that violate an operation's preconditions.
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("malformed file at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("unsupported format: {0}")]
    Unsupported(String),

    #[error("numeric error in {component}: {message}")]
    Numeric { component: String, message: String },

    /// An internal contract between components was broken (missing saved
    /// activations, mismatched checkpoints, out-of-order stream chunks).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn numeric(component: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Numeric {
            component: component.into(),
            message: message.into(),
        }
    }
}
