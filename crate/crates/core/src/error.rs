use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, MarError>;

#[derive(Debug, Error)]
pub enum MarError {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("index out of range: {what} = {index}, limit {limit}")]
    OutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape { expected: Vec<usize>, got: Vec<usize> },

    #[error("unit mismatch: expected {expected}, got {got}")]
    Unit { expected: &'static str, got: &'static str },

    #[error("empty metal mask")]
    EmptyMask,

    #[error("metal trace run touches the detector edge in view {view}")]
    TraceAtEdge { view: usize },

    #[error("invalid spectrum: {0}")]
    Spectrum(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical divergence: {0}")]
    Divergence(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl MarError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MarError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        MarError::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: &[usize], got: &[usize]) -> Self {
        MarError::Shape {
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }

    /// Process exit code used by the CLI: 2 config, 3 data, 4 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            MarError::Config(_) | MarError::Geometry(_) | MarError::Spectrum(_) => 2,
            MarError::Divergence(_) => 4,
            _ => 3,
        }
    }
}
