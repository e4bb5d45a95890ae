use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("aliasing: sweep end frequency {f1} Hz must be below Nyquist ({nyquist} Hz)")]
    Aliasing { f1: f64, nyquist: f64 },

    #[error("signal error: {0}")]
    Signal(String),

    #[error("shape mismatch in {layer}: {detail}")]
    Shape { layer: &'static str, detail: String },

    #[error("autodiff error: {0}")]
    Graph(String),

    #[error("checkpoint does not match architecture: {}", .names.join(", "))]
    CheckpointMismatch { names: Vec<String> },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("missing prerequisite artifact: {0}")]
    MissingArtifact(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("malformed tensor blob: {0}")]
    Blob(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {message}")]
    Toml { path: PathBuf, message: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(layer: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            layer,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
