use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A row in an input table could not be accepted.
    #[error("{file}:{line}: field `{field}`: {message}")]
    Row {
        file: String,
        line: u64,
        field: String,
        message: String,
    },

    #[error("{file}: {message}")]
    Schema { file: String, message: String },

    #[error("patient `{0}` has no observations for measure {1}")]
    NoObservations(String, &'static str),

    #[error("empty input")]
    EmptyInput,

    #[error("target contains a single class")]
    SingleClass,

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("k = {k} is out of range 1..={max}")]
    InvalidK { k: usize, max: usize },

    #[error("column mismatch: model trained on {expected} columns, got {actual}")]
    ColumnMismatch { expected: usize, actual: usize },

    #[error("patient `{0}` has no labels")]
    Unlabeled(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot split {rows} rows into {folds} folds")]
    TooFewRows { rows: usize, folds: usize },

    #[error("empty cohort after inclusion filters")]
    EmptyCohort,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn row(file: &str, line: u64, field: &str, message: impl Into<String>) -> Self {
        Error::Row {
            file: file.to_string(),
            line,
            field: field.to_string(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
