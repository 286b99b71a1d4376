use std::path::PathBuf;

use thiserror::Error;

use crate::dataset::AttributeId;

/// Errors produced while loading data, training models or evaluating them.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("{file}:{line}: unknown image id `{id}`")]
    UnknownImage { file: String, line: usize, id: String },
    #[error("{file}:{line}: attribute id out of range: {id} (vocabulary has {m} attributes)")]
    AttributeOutOfRange {
        file: String,
        line: usize,
        id: usize,
        m: usize,
    },
    #[error("{file}:{line}: descriptor dimension mismatch for `{id}`: expected {expected}, found {found}")]
    DimensionMismatch {
        file: String,
        line: usize,
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("pair ({0}, {1}) has an empty vote map")]
    EmptyVotes(String, String),
    #[error("empty vote table")]
    EmptyVoteTable,
    #[error("n_folds must be in 2..={n_images}, got {n_folds}")]
    FoldCount { n_folds: usize, n_images: usize },
    #[error("attribute `{0}` has no ordered pairs; cannot orient its ranking direction")]
    NoOrderedPairs(String),
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("missing scores for image `{0}`")]
    MissingScores(String),
    #[error("{file}:{line}: non-finite score for image `{id}`")]
    NonFiniteScore { file: String, line: usize, id: String },
    #[error("{file}:{line}: column count mismatch: expected {expected}, found {found}")]
    ColumnCount {
        file: String,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("unsupported model file version {0}")]
    UnsupportedVersion(u64),
    #[error("invalid model file: {0}")]
    InvalidModel(String),
    #[error("model file has no `{0}` section")]
    MissingSection(&'static str),
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("fold {0} has no test pairs")]
    EmptyFold(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("pair mismatch between predictions and labels at position {0}")]
    PairMismatch(usize),
    #[error("attribute id {0} out of range")]
    BadAttribute(AttributeId),
    #[error("unknown image `{0}`")]
    NotFound(String),
    #[error("reference `{0}` was never displayed in this session")]
    NotDisplayed(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
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
