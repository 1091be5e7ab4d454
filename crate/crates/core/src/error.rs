use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the reconstruction toolkit.
#[derive(Error, Debug)]
pub enum Error {
    /// A caller passed an argument outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Geometry that violates a structural invariant (empty, non-watertight, ...).
    #[error("geometry error: {0}")]
    Geometry(String),

    /// A file could not be parsed.
    #[error("parse error in {path}: {location}: {message}")]
    Parse {
        path: String,
        location: String,
        message: String,
    },

    /// Procedural scene generation failed.
    #[error("scene generation failed: {0}")]
    SceneGen(String),

    /// A required input (checkpoint, frames, samples) is missing or inconsistent.
    #[error("data error: {0}")]
    Data(String),

    /// Configuration could not be read or is inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// A loss or gradient became NaN or infinite.
    #[error("numerical failure: {0}")]
    NonFinite(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(
        path: impl Into<String>,
        location: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Parse {
            path: path.into(),
            location: location.into(),
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite(_) => 3,
            Error::InvalidArgument(_) | Error::Config(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
