//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer dimensions do not line up; the message names the offender.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A caller-supplied value violates an operation's precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A non-finite value showed up where the numeric invariants forbid it.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A file could not be parsed; `line` is 1-based within the file.
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// A persisted file declares a schema this build does not understand.
    #[error("unsupported schema: {0}")]
    Schema(String),

    /// Experiment configuration is malformed or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
