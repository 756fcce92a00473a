use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the pipeline. Each variant maps onto one of the stable
/// process exit codes used by the command-line front end.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {field}: {message}")]
    Config { field: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),

    #[error("malformed {what} in {path}: {message}")]
    Format {
        what: &'static str,
        path: PathBuf,
        message: String,
    },

    #[error("stability violation at t = {t}: |field| = {magnitude:e} exceeds the overflow guard (time step too large?)")]
    StabilityViolation { t: f64, magnitude: f64 },

    #[error("training diverged at epoch {epoch}: loss {loss:e} > 1e3 x initial loss {initial:e}")]
    Divergence { epoch: usize, loss: f64, initial: f64 },

    #[error("invalid MCMC initial point ({x}, {y}): log-target is -inf")]
    InvalidInit { x: f64, y: f64 },

    #[error("receiver set is not identifiable: {0}")]
    Identifiability(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(what: &'static str, path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            what,
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// Process exit code: 1 config, 2 I/O, 3 numerical, 4 identifiability.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::InvalidArgument(_) => 1,
            Error::Io { .. } | Error::MissingArtifact(_) | Error::Format { .. } => 2,
            Error::StabilityViolation { .. } | Error::Divergence { .. } | Error::InvalidInit { .. } => 3,
            Error::Identifiability(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
