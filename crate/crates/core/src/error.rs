//! Error type shared across the crate.
//!
//! Every failure carries a stable category string so callers (notably the
//! CLI) can report machine-parseable one-liners.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Tensor shapes do not conform for the requested operation.
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// NaN or Inf crossed an operation boundary.
    Numeric { op: &'static str, detail: String },
    /// A documented precondition was violated.
    Contract(String),
    /// Token id outside the vocabulary.
    Vocab(String),
    /// Malformed or inconsistent input data.
    Data(String),
    /// Invalid configuration value or key.
    Config(String),
    /// Checkpoint file malformed or version-incompatible.
    Checkpoint(String),
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable lowercase category name, used in CLI error lines.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::Numeric { .. } => "numeric",
            Error::Contract(_) => "contract",
            Error::Vocab(_) => "vocab",
            Error::Data(_) => "data",
            Error::Config(_) => "config",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) => "io",
        }
    }

    pub fn contract(msg: impl Into<String>) -> Error {
        Error::Contract(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, lhs, rhs } => {
                write!(f, "{op}: shapes {lhs:?} and {rhs:?} do not conform")
            }
            Error::Numeric { op, detail } => write!(f, "{op}: {detail}"),
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::Vocab(msg) => write!(f, "vocabulary error: {msg}"),
            Error::Data(msg) => write!(f, "data error: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Checkpoint(msg) => write!(f, "checkpoint error: {msg}"),
            Error::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
