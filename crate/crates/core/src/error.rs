use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot build schema: {0}")]
    Schema(String),

    #[error("invalid sparse vector: {0}")]
    SparseVector(String),

    #[error("feature index {index} out of range for feature space of size {size}")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("supplier index {index} out of range ({count} suppliers)")]
    SupplierOutOfRange { index: usize, count: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate event id `{0}`")]
    DuplicateEvent(String),

    #[error("dataset has no events")]
    NoEvents,

    #[error("dataset is empty: {0}")]
    EmptyDataset(String),

    #[error("cannot split {events} events into {folds} folds")]
    TooManyFolds { folds: usize, events: usize },

    #[error("infeasible generator config: {0}")]
    InfeasibleConfig(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("event {0} has no non-participating supplier to sample as a negative")]
    NoNegative(usize),

    #[error("non-finite parameter after update; try a smaller learning rate (currently {learning_rate})")]
    NonFinite { learning_rate: f64 },

    #[error("recommender produced a non-finite score for supplier {supplier}")]
    NonFiniteScore { supplier: usize },

    #[error("schema hash mismatch: model was trained against {expected}, provided schema hashes to {found}")]
    SchemaMismatch { expected: String, found: String },

    #[error("unsupported document version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("every hyperparameter point failed to train")]
    AllPointsFailed,

    #[error("i/o error on {path}: {source}")]
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
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
