//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("key mismatch: operand bound to key {found:016x}, expected {expected:016x}")]
    KeyMismatch { expected: u64, found: u64 },
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("fixed-point overflow: {0}")]
    Overflow(String),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("invalid kernel spec: {0}")]
    InvalidSpec(String),
    #[error("key generation failed: {0}")]
    KeyGen(String),
    #[error("malformed ciphertext: {0}")]
    MalformedCiphertext(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("protocol aborted: {0}")]
    Abort(String),
    #[error("wire format error: {0}")]
    Wire(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("metric undefined: {0}")]
    Metric(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
