use std::path::PathBuf;

/// Errors produced anywhere in the forecasting pipeline.
///
/// The variants double as failure categories for the command-line tool,
/// which maps each one to a distinct exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("input domain error: {0}")]
    InputDomain(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("data format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Short category label, stable across releases.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::InputDomain(_) => "input-domain",
            Error::Numeric(_) => "numeric",
            Error::Contract(_) => "contract",
            Error::UndefinedMetric(_) => "undefined-metric",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
        }
    }
}
