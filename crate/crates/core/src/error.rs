use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate embedding: vector has zero norm")]
    DegenerateEmbedding,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("class {class} has {available} labeled rows, {requested} requested")]
    InsufficientShots {
        class: usize,
        available: usize,
        requested: usize,
    },

    #[error("division by zero in paradigm weights ({0})")]
    ZeroWeightDenominator(&'static str),

    #[error("unknown example id {0}")]
    UnknownId(u64),

    #[error("numerical overflow: non-finite loss")]
    NumericalOverflow,

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("{0}")]
    Unsupported(&'static str),

    #[error("undefined balance: seen accuracy is zero")]
    UndefinedBalance,

    #[error("not a PLE1 file")]
    BadMagic,

    #[error("unsupported PLE1 version {0}")]
    BadVersion(u16),

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("row {row} norm {norm} drifts more than 1e-3 from unit length")]
    NormDrift { row: usize, norm: f64 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag used by the CLI's error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DegenerateEmbedding => "degenerate_embedding",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidInput(_) => "invalid_input",
            Error::InsufficientShots { .. } => "insufficient_shots",
            Error::ZeroWeightDenominator(_) => "zero_weight_denominator",
            Error::UnknownId(_) => "unknown_id",
            Error::NumericalOverflow => "numerical_overflow",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Unsupported(_) => "unsupported",
            Error::UndefinedBalance => "undefined_balance",
            Error::BadMagic => "bad_magic",
            Error::BadVersion(_) => "bad_version",
            Error::Truncated(_) => "truncated",
            Error::NormDrift { .. } => "norm_drift",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
