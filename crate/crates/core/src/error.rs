use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the CLI to choose an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Io,
    Validation,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("invalid vocabulary: {0}")]
    Vocab(String),

    #[error("malformed {format} file: {reason}")]
    Format { format: &'static str, reason: String },

    #[error("unsupported {format} version {found} (expected {expected})")]
    Version {
        format: &'static str,
        found: u16,
        expected: u16,
    },

    #[error("token id {id} out of range for vocabulary of size {vocab} at byte offset {offset}")]
    TokenOutOfRange { id: u32, vocab: u32, offset: u64 },

    #[error("vocabulary size mismatch: file has {found}, session expects {expected}")]
    VocabMismatch { found: u32, expected: u32 },

    #[error("distribution has empty support: {0}")]
    EmptySupport(String),

    #[error("invalid distribution: {0}")]
    InvalidDist(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("no logits record for example {example_index} position {position}")]
    MissingLogits { example_index: u64, position: u32 },

    #[error("sequence has no maskable positions")]
    NothingToMask,

    #[error("length mismatch: expected {expected}, got {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("incompatible curriculum: {0}")]
    Incompatible(String),

    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum { stored: u64, computed: u64 },

    #[error("example order violation: {0}")]
    Ordering(String),

    #[error("dump was generated with a different configuration ({0} hash differs)")]
    ConfigHashMismatch(&'static str),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(format: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            format,
            reason: reason.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. } => ErrorClass::Io,
            Error::Config(_) | Error::InvalidParam(_) | Error::Incompatible(_) => {
                ErrorClass::Config
            }
            _ => ErrorClass::Validation,
        }
    }
}
