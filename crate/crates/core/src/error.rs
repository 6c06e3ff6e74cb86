use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = BetError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum BetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("non-numeric cell at row {row}, column `{column}`: {value:?}")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("too few rows: {rows} rows, at least {required} required")]
    TooFewRows { rows: usize, required: usize },

    #[error("invalid outcome label {value} at row {row} (expected an integer in 0..{classes})")]
    InvalidLabel {
        row: usize,
        value: f64,
        classes: usize,
    },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Tree(#[from] crate::tree::TreeError),

    #[error(transparent)]
    Leaf(#[from] crate::likelihood::LeafError),

    #[error("invalid cluster {cluster}: snapshot has {clusters} clusters")]
    InvalidCluster { cluster: usize, clusters: usize },

    #[error("empty trace: no retained iterations")]
    EmptyTrace,

    #[error("length mismatch: {0} predictions vs {1} truths")]
    LengthMismatch(usize, usize),

    #[error("empty input")]
    EmptyInput,

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl BetError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BetError::Io {
            path: path.into(),
            source,
        }
    }
}
