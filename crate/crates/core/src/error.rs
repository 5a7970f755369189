use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: duplicate id {id:?}")]
    DuplicateId { path: PathBuf, line: usize, id: String },

    #[error("{0}: file is empty")]
    EmptyFile(PathBuf),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("unknown passage {0:?}")]
    UnknownPassage(String),

    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("checksum mismatch: stored {stored:016x}, computed {computed:016x}")]
    Checksum { stored: u64, computed: u64 },

    #[error("teacher probability for {0:?} is zero")]
    ZeroTeacherProb(String),

    #[error("no training queries")]
    NoTrainingQueries,

    #[error("iteration {iteration}: no usable training examples ({detail})")]
    NoUsableExamples { iteration: usize, detail: String },

    #[error("no metrics recorded")]
    NoMetrics,

    #[error("corpus mismatch: {0}")]
    CorpusMismatch(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the input data rather than the runtime.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::DuplicateId { .. }
                | Error::EmptyFile(_)
                | Error::EmptyCorpus
                | Error::UnknownPassage(_)
                | Error::BadMagic { .. }
                | Error::Truncated(_)
                | Error::Checksum { .. }
                | Error::CorpusMismatch(_)
                | Error::NoTrainingQueries
                | Error::Json(_)
        )
    }
}
