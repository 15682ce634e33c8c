//! Error types shared across the crate.

use thiserror::Error;

/// Decoder-level failures for WAV input.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum AudioError {
    #[error("malformed WAV header: {0}")]
    BadHeader(String),
    #[error("unsupported codec: format tag {format_tag}, {bits_per_sample} bits/sample")]
    UnsupportedCodec { format_tag: u16, bits_per_sample: u16 },
    #[error("sample rate {got} Hz, expected {expected} Hz (resampling not supported)")]
    WrongRate { expected: u32, got: u32 },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArg(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("dataset: {0}")]
    Data(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
