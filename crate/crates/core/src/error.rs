//! Error type shared across the crate, with one variant per failure category.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer shapes do not conform.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// An operation was called outside its contract (non-scalar backward
    /// root, label out of range, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// A geometry string failed to parse; `pos` is a byte offset into it.
    #[error("parse error at position {pos}: {msg}")]
    Parse { pos: usize, msg: String },

    /// A data file is malformed; `field` names the offending header field
    /// or section.
    #[error("format error in {field}: {msg}")]
    Format { field: String, msg: String },

    /// A checkpoint failed validation (bad magic, version, checksum, or a
    /// geometry that does not match).
    #[error("integrity error: {0}")]
    Integrity(String),

    /// An experiment configuration is unreadable or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short category tag used in CLI messages and mapped to exit codes.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Usage(_) => "usage",
            Error::Parse { .. } => "parse",
            Error::Format { .. } => "format",
            Error::Integrity(_) => "integrity",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }
}
