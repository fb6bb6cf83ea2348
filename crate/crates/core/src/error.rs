use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("label column `{0}` not found in header")]
    MissingLabelColumn(String),

    #[error("invalid label at row {row}, column `{column}`: {value:?} (expected 0 or 1)")]
    InvalidLabel {
        row: usize,
        column: String,
        value: String,
    },

    #[error("column `{0}` has no non-missing values")]
    AllMissing(String),

    #[error("dataset still contains missing values")]
    HasMissing,

    #[error("non-finite feature value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("label has one class")]
    SingleClass,

    #[error("class {class} has {count} rows; at least {required} required")]
    ClassTooSmall {
        class: u8,
        count: usize,
        required: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown hyperparameter `{param}` for family {family}")]
    UnknownParam { family: String, param: String },

    #[error("feature sets differ between rankings: {0}")]
    FeatureSetMismatch(String),

    #[error("estimator did not converge after {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("unsupported version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("artifact checksum mismatch")]
    ChecksumMismatch,

    #[error("malformed artifact: {0}")]
    MalformedArtifact(String),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
