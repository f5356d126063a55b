use thiserror::Error;

pub type Result<T> = std::result::Result<T, LealError>;

#[derive(Debug, Error)]
pub enum LealError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: axis {axis} out of range for rank {rank}")]
    AxisOutOfRange {
        op: &'static str,
        axis: usize,
        rank: usize,
    },

    #[error("tensor of shape {shape:?} holds {len} values")]
    BadLength { shape: Vec<usize>, len: usize },

    #[error("backward requires a scalar output, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid configuration: `{field}` {msg}")]
    InvalidField { field: &'static str, msg: String },

    #[error("index {index} out of range for length {len} ({what})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("{path}:{line}: {msg}")]
    Csv {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("rank-deficient design matrix: {0}")]
    RankDeficient(String),

    #[error("undefined quantity: {0}")]
    Undefined(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl LealError {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        LealError::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
