use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid coordinate: lat {lat}, lon {lon}")]
    InvalidCoordinate { lat: f64, lon: f64 },

    #[error("invalid bounding box: {0}")]
    InvalidBox(String),

    #[error("bounding box has zero extent on at least one axis")]
    DegenerateBox,

    #[error("empty input")]
    EmptyInput,

    #[error("record {0} lies outside the partition bounds")]
    PointOutOfBounds(u64),

    #[error("point ({lat}, {lon}) lies outside the partition bounds")]
    OutOfBounds { lat: f64, lon: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no token reaches the minimum document frequency")]
    EmptyVocabulary,

    #[error("cosine similarity undefined for a zero vector")]
    ZeroVector,

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("cannot train embeddings on an empty corpus")]
    EmptyCorpus,

    #[error("unknown token {0:?}")]
    UnknownToken(String),

    #[error("similarity threshold {0} outside (0, 1]")]
    InvalidThreshold(f64),

    #[error("no training examples")]
    EmptyTraining,

    #[error("{features} feature vectors but {labels} labels")]
    LabelMismatch { features: usize, labels: usize },

    #[error("label {0} is not known to the model")]
    UnknownLabel(usize),

    #[error("training data contains a single class")]
    SingleClass,

    #[error("grid diagnostics need at least two predicted leaves")]
    InsufficientLeaves,

    #[error("{records} records cannot be split into {folds} folds")]
    TooFewRecords { records: usize, folds: usize },

    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error("corpus contains no valid records")]
    NoValidRecords,

    #[error("vocabulary hash {found} does not match the model's {expected}")]
    VocabularyMismatch { expected: String, found: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn in_fold(self, fold: usize) -> Self {
        Error::Fold {
            fold,
            source: Box::new(self),
        }
    }

    /// Process exit code: 1 usage/config, 2 data, 3 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParameter(_) | Error::InvalidThreshold(_) => 1,
            Error::Fold { source, .. } => source.exit_code(),
            Error::Io(_) | Error::Json(_) => 3,
            _ => 2,
        }
    }
}
