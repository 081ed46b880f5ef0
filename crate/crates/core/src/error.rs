use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("{op}: shapes {lhs:?} and {rhs:?} are not compatible")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("matmul: inner dimensions differ, lhs {lhs:?} vs rhs {rhs:?}")]
    InnerDimMismatch { lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("shape {shape:?} implies {expected} elements, got {got}")]
    ElementCount {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("{op}: axis {axis} out of range for rank-{rank} tensor")]
    AxisOutOfRange {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("target rows must be one-hot (entries in {{0,1}}, row sum 1)")]
    NotOneHot,
    #[error("{0}")]
    Config(String),
    #[error("non-finite loss at step {step}: {value}")]
    NonFinite { step: u64, value: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint tensor {name}: expected shape {expected:?}, got {got:?}")]
    CheckpointShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub fn config(msg: impl Into<String>) -> Self {
        CoreError::Config(msg.into())
    }
}
