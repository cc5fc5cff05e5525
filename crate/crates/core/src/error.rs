use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid harmonic index: n={n}, m={m} (|m| must not exceed n)")]
    InvalidIndex { n: usize, m: i64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("signal energy is zero, SNR is undefined")]
    ZeroSignal,

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("reference field has zero energy on the evaluation region")]
    ZeroReference,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("shard format error: {0}")]
    Format(String),

    #[error("shard checksum mismatch: header says {expected}, payload hashes to {actual}")]
    Checksum { expected: String, actual: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
