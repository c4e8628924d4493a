use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid permutation {axes:?} for rank {rank}")]
    InvalidPermutation { axes: Vec<usize>, rank: usize },

    #[error("{what}: {value} is not divisible by {divisor}")]
    Indivisible {
        what: &'static str,
        value: usize,
        divisor: usize,
    },

    #[error("operation produces an empty output: {0}")]
    EmptyOutput(String),

    #[error("operation `{0}` has no backward rule and cannot be recorded")]
    UnsupportedOp(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value produced at node {node} ({name})")]
    NonFinite { node: usize, name: String },

    #[error("non-finite value: {0}")]
    NonFiniteValue(String),

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error("malformed tensor file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
