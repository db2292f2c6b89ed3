use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CvpError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CvpError {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("bad magic bytes {found:?}, expected \"CVPT\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported tensor file version {0}")]
    UnsupportedVersion(u8),

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),

    #[error("truncated payload: need {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("stale or mismatched activation cache: {0}")]
    StaleCache(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CvpError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CvpError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: &[usize], actual: &[usize]) -> Self {
        CvpError::Shape {
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }
}
