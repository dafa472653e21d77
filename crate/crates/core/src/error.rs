use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid network spec: {0}")]
    Spec(String),

    #[error("state error: {0}")]
    State(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("class index {index} out of range for {classes} classes")]
    Range { index: usize, classes: usize },

    #[error("parse error at row {row}: {message}")]
    Parse { row: u64, message: String },

    #[error("row {row}: expected {expected} pixels, found {found}")]
    Count { row: u64, expected: usize, found: usize },

    #[error("image format error: {0}")]
    Format(String),

    #[error("truncated image payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("region {x},{y} {w}x{h} is outside a {width}x{height} image")]
    Bounds {
        x: i64,
        y: i64,
        w: i64,
        h: i64,
        width: usize,
        height: usize,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("feature index {index} out of range ({count} features)")]
    Index { index: usize, count: usize },

    #[error("invalid argument: {0}")]
    Arg(String),

    #[error("unsupported model format version {found} (expected {expected})")]
    Version { found: u64, expected: u64 },

    #[error("non-finite value in parameter {0}")]
    Finite(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
