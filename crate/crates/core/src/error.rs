use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid scale: {0}")]
    InvalidScale(String),
    #[error("invalid subdivision factor {0}, expected 2 or 4")]
    InvalidFactor(u32),
    #[error("voxel {0} outside grid bounds")]
    OutOfBounds(String),
    #[error("duplicate voxel {0}")]
    DuplicateVoxel(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("probabilities not normalized at row {row} (sum {sum})")]
    NotNormalized { row: usize, sum: f64 },
    #[error("no labeled voxels")]
    NoLabels,
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
