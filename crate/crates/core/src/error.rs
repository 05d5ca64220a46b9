use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },

    #[error("i/o error on {path}: {source}")]
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

    /// Short machine-parsable category, used by the CLI on failure.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Index(_) => "index",
            Error::Contract(_) => "contract",
            Error::Config(_) => "config",
            Error::Format(_) => "format",
            Error::UndefinedCorrelation(_) => "undefined-correlation",
            Error::Split(_) => "split",
            Error::NonFinite { .. } => "non-finite",
            Error::Io { .. } => "io",
        }
    }

    /// Process exit code for this category. 1 is reserved for unexpected
    /// failures and 2 for command-line usage errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 3,
            Error::Io { .. } => 4,
            Error::Format(_) => 5,
            Error::Contract(_) => 6,
            Error::Dimension(_) => 7,
            Error::Index(_) => 8,
            Error::Split(_) => 9,
            Error::UndefinedCorrelation(_) => 10,
            Error::NonFinite { .. } => 11,
        }
    }
}
