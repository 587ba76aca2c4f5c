use std::path::PathBuf;

use thiserror::Error;

use crate::expert::ExpertError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("timestamp {index} out of range for stream of length {len}")]
    OutOfRange { index: usize, len: usize },

    #[error("degenerate interval [{start}, {end}]")]
    DegenerateInterval { start: i64, end: i64 },

    #[error("segments {first} and {second} of video `{video}` overlap")]
    OverlappingSegments { video: String, first: usize, second: usize },

    #[error("segment {index} of video `{video}` ([{st}, {en}]) lies outside [0, {last}]")]
    SegmentOutOfRange {
        video: String,
        index: usize,
        st: usize,
        en: usize,
        last: i64,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("non-finite value at index {index}: {context}")]
    NonFinite { index: usize, context: String },

    #[error("training aborted at epoch {epoch}, step {step}: {reason}")]
    TrainingDiverged { epoch: usize, step: usize, reason: String },

    #[error(transparent)]
    Expert(#[from] ExpertError),

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
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// True for errors caused by bad user input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::TrainingDiverged { .. } | Error::Expert(_))
    }
}
