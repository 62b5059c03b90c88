use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("shape {shape:?} holds {expected} values but {actual} were supplied")]
    ShapeData {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("convolution kernel width {0} is not supported (must be odd)")]
    UnsupportedKernel(usize),

    #[error("pooling window {pool} does not fit in sequence of length {len}")]
    EmptyOutput { len: usize, pool: usize },

    #[error("invalid probability {0}: expected 0 <= p < 1")]
    InvalidProbability(f64),

    #[error("recurrent layer received an empty sequence")]
    EmptySequence,

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("index {index} out of range for table with {rows} rows")]
    IndexOutOfRange { index: usize, rows: usize },

    #[error("non-finite gradient in parameter {param}: {count} of {len} entries are NaN or infinite")]
    NonFiniteGradient {
        param: String,
        count: usize,
        len: usize,
    },

    #[error("optimizer state mismatch: {0}")]
    StateMismatch(String),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;
