use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("matrix not factorizable after jitter escalation (max jitter {jitter:.3e}, condition estimate {condition:.3e})")]
    Factorization { jitter: f64, condition: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("degenerate density: {0}")]
    DegenerateDensity(String),

    #[error("unsupported capability: {0}")]
    Capability(String),

    #[error("initialization failed: {0}")]
    Initialization(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("experiment failed: {0}")]
    Experiment(String),

    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
