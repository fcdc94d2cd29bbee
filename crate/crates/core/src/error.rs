use std::io;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: Vec<u8> },

    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("validation failed for patch {index}: {reason}")]
    PatchValidation { index: usize, reason: String },

    #[error("unknown band label {0:?}")]
    UnknownBand(String),

    #[error("band {band:?} has zero variance")]
    ZeroVariance { band: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no positive pixels in the training masks; exclude fire-free training sets or supply a class-weight override")]
    NoPositivePixels,

    #[error("non-finite gradient in parameter {0:?}")]
    NonFiniteGradient(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate statistic: {0}")]
    Degenerate(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
