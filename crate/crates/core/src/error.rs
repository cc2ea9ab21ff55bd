use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("velocity conversion is singular at t = {t} (limit {t_max})")]
    Singularity { t: f64, t_max: f64 },

    #[error("non-finite loss at batch indices {indices:?}")]
    NonFinite { indices: Vec<usize> },

    #[error("activation tape does not belong to the current parameters")]
    StaleTape,

    #[error("no samples fell inside the kernel window")]
    UndefinedEstimate,

    #[error("empty batch")]
    EmptyBatch,

    #[error("malformed tensor file: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
