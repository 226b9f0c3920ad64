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
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error(
        "duplicate rating for utterance {utterance_id:?} by listener {listener_id:?} (line {line})"
    )]
    Duplicate {
        utterance_id: String,
        listener_id: String,
        line: u64,
    },
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("listener index {index} out of range (table has {len} rows)")]
    ListenerOutOfRange { index: usize, len: usize },
    #[error("{0}")]
    Contract(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("degenerate batch: target has zero variance")]
    DegenerateBatch,
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),
    #[error("no eligible listener has two or more ratings")]
    NoEligibleListener,
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{context}: {source}")]
    Csv {
        context: String,
        #[source]
        source: csv::Error,
    },
    #[error("cell {regime} (seed {seed}): {source}")]
    Cell {
        regime: String,
        seed: u64,
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

    /// True for errors caused by invalid configuration rather than runtime failure.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Cell { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
