use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("{what}: expected {expected} elements, got {actual}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("empty sample passed to {0}")]
    EmptySample(&'static str),

    #[error("empty split: {0}")]
    EmptySplit(&'static str),

    #[error("probability {0} is outside the open interval (0, 1)")]
    POutOfRange(f64),

    #[error("targets have zero variance; r2 and rse are undefined")]
    DegenerateVariance,

    #[error("isotonic recalibration needs at least 2 points, got {0}")]
    TooFewPoints(usize),

    #[error("series of length {len} is too short for window {window} and horizon {horizon}")]
    SeriesTooShort {
        len: usize,
        window: usize,
        horizon: usize,
    },

    #[error("invalid split fractions {0:?}")]
    FractionInvalid(Vec<f64>),

    #[error("file not found: {0}")]
    FileNotFound(PathBuf),

    #[error("column `{0}` not present in header")]
    ColumnMissing(String),

    #[error("could not parse row {row}, column `{column}`: {value:?}")]
    ParseError {
        row: usize,
        column: String,
        value: String,
    },

    #[error("no checkpoint in {0}")]
    MissingCheckpoint(PathBuf),

    #[error("runs use different confidence grids")]
    IncompatibleGrids,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged in stage {stage}, epoch {epoch}: {source}")]
    Diverged {
        stage: u8,
        epoch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn length(what: &'static str, expected: usize, actual: usize) -> Self {
        Error::LengthMismatch {
            what,
            expected,
            actual,
        }
    }
}
