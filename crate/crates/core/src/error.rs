use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}: {message}")]
    MalformedRow {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unknown label token `{0}`")]
    UnknownLabel(String),

    #[error("line {line}: weak_mean out of range: {value}")]
    WeakMeanOutOfRange { line: usize, value: f64 },

    #[error("line {line}: negative weak_spread: {value}")]
    NegativeSpread { line: usize, value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown model `{name}`; valid names: {}", .valid.join(", "))]
    UnknownModel { name: String, valid: Vec<String> },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("sequence of length {len} exceeds max_positions {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("classifier head has {head} outputs but task {task} has {labels} labels")]
    LabelCountMismatch {
        head: usize,
        task: char,
        labels: usize,
    },

    #[error("sequence has no maskable token")]
    NoMaskableTokens,

    #[error("non-finite loss at step {step} (batch ids: {})", .batch_ids.join(", "))]
    NonFiniteLoss { step: usize, batch_ids: Vec<String> },

    #[error("train and validation sets share ids: {}", .0.join(", "))]
    IdOverlap(Vec<String>),

    #[error("id sets differ; missing: [{}], unexpected: [{}]", .missing.join(", "), .unexpected.join(", "))]
    IdMismatch {
        missing: Vec<String>,
        unexpected: Vec<String>,
    },

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input data or arguments rather than a
    /// failure inside the pipeline itself.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::NonFiniteLoss { .. } => false,
            Error::Fold { source, .. } => source.is_data_error(),
            _ => true,
        }
    }
}
