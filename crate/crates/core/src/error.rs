use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),

    #[error("insufficient length: need {needed} samples, have {available}")]
    InsufficientLength { needed: usize, available: usize },

    #[error("aliasing: {0}")]
    Aliasing(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("metric domain error: {0}")]
    MetricDomain(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Contract(_) => 2,
            Error::Data(_) | Error::Io { .. } | Error::InsufficientLength { .. } => 3,
            Error::Dimension(_)
            | Error::NumericDomain(_)
            | Error::DegenerateSignal(_)
            | Error::Aliasing(_)
            | Error::MetricDomain(_)
            | Error::Divergence(_) => 4,
        }
    }
}
