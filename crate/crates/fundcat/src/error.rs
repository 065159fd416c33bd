use std::path::Path;

use thiserror::Error;

/// Errors produced by the fundcat pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv header mismatch: {0}")]
    HeaderMismatch(String),

    #[error("row {row}: expected {expected} columns, found {found}")]
    MalformedRow {
        row: u64,
        expected: usize,
        found: usize,
    },

    #[error("row {row}, column `{column}`: cannot parse `{token}` as {expected}")]
    BadCell {
        row: u64,
        column: String,
        token: String,
        expected: &'static str,
    },

    #[error("row {row}: duplicate fund_id `{id}`")]
    DuplicateFundId { id: String, row: u64 },

    #[error("column `{0}` does not belong to any declared feature group")]
    UnknownGroup(String),

    #[error("unknown feature column `{0}`")]
    UnknownFeature(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("universe is empty")]
    EmptyUniverse,

    #[error("no category meets threshold {0}")]
    NoCategoryMeetsThreshold(usize),

    #[error("cannot stratify singleton category `{0}`")]
    SingletonCategory(String),

    #[error("row width mismatch: model expects {expected} features, got {got}")]
    WidthMismatch { expected: usize, got: usize },

    #[error("value is missing in `{column}`; run imputation before fitting or transforming")]
    NotImputed { column: String },

    #[error("impurity is undefined for all-zero class counts")]
    AllZeroCounts,

    #[error("undefined ROC: labels contain no {0} sample")]
    UndefinedRoc(&'static str),

    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("artifact schema version {found} unsupported (this build reads version {supported})")]
    ArtifactVersion { found: u32, supported: u32 },

    #[error("artifact checksum mismatch: file is corrupted or was edited")]
    ArtifactChecksum,

    #[error("artifact is unreadable: {0}")]
    ArtifactInvalid(String),

    #[error("data does not match the model artifact: {0}")]
    DataMismatch(String),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 usage, 3 data, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParam(_) => 2,
            Error::Divergence { .. } | Error::AllZeroCounts | Error::UndefinedRoc(_) => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
