use thiserror::Error;

/// Errors produced anywhere in the crate.
///
/// The CLI maps [`Error::Config`] to exit code 2 and [`Error::Numerical`]
/// to exit code 3; everything else exits with 1.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value. `path` is the dotted field path.
    #[error("invalid config at `{path}`: {message}")]
    Config { path: String, message: String },

    /// Vector or matrix dimensions do not agree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A policy or caller broke the episode protocol (illegal action etc).
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Optimizer failure, non-finite values, singular covariance.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Input data is unusable (empty class, degenerate contrast, ...).
    #[error("invalid data: {0}")]
    Data(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn parse(path: impl AsRef<std::path::Path>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.as_ref().display().to_string(),
            message: message.to_string(),
        }
    }

    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::Numerical(_) => 3,
            _ => 1,
        }
    }
}
