use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("wav decode error: {0}")]
    Wav(#[from] hound::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported audio: {0}")]
    UnsupportedAudio(String),
    #[error("empty audio")]
    EmptyAudio,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },
    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error("version mismatch: expected {expected}, found {found}")]
    Version { expected: u16, found: u16 },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("chromagram is already tonic-normalized")]
    AlreadyNormalized,
    #[error("unknown class: {0}")]
    UnknownClass(String),
    #[error("unknown variant: {0}")]
    UnknownVariant(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
