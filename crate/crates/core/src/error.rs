use std::path::PathBuf;

use autodiff::AutodiffError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] AutodiffError),

    #[error("{path}: line {line}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: line {line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("class {class} has {count} example(s); at least 2 are required to split")]
    DegenerateSplit { class: &'static str, count: usize },

    #[error("degenerate training data: {0}")]
    DegenerateData(String),

    #[error("{path}: requested {requested} {class} records but only {available} are available")]
    Shortfall {
        path: PathBuf,
        class: &'static str,
        requested: usize,
        available: usize,
    },

    #[error("invalid label {0}: expected 0 or 1")]
    InvalidLabel(f64),

    #[error("input index {index} is outside the {rows}-row embedding table")]
    CorruptInput { index: usize, rows: usize },

    #[error("training diverged: non-finite {what} at epoch {epoch}")]
    NonFinite { what: &'static str, epoch: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    #[error("unsupported {what} version {found} (this build reads up to {supported})")]
    UnsupportedVersion {
        what: &'static str,
        found: u32,
        supported: u32,
    },

    #[error("{0}")]
    Misuse(String),

    #[error("{predictions} predictions but {golds} gold labels")]
    LengthMismatch { predictions: usize, golds: usize },

    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,

    #[error("grid cell (model {model}, n={n}, seed={seed}): {source}")]
    GridCell {
        model: String,
        n: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
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

    /// True when the failure came from NaN or infinite values during training.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::Tensor(AutodiffError::NonFiniteGradient { .. }) | Error::NonFinite { .. } => true,
            Error::GridCell { source, .. } => source.is_numeric(),
            _ => false,
        }
    }

    /// True when the failure is a bad request rather than bad data.
    pub fn is_usage(&self) -> bool {
        match self {
            Error::Config(_) | Error::Misuse(_) => true,
            Error::GridCell { source, .. } => source.is_usage(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
