//! Crate-wide error type.

use thiserror::Error;

/// File kinds named in format errors so callers can tell which artifact
/// was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    Checkpoint,
    Container,
    Image,
}

impl std::fmt::Display for FileKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FileKind::Checkpoint => write!(f, "checkpoint"),
            FileKind::Container => write!(f, "container"),
            FileKind::Image => write!(f, "image"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value produced or supplied: {0}")]
    NonFinite(String),

    #[error("unsupported image: {0}")]
    UnsupportedImage(String),

    #[error("bad magic bytes in {kind} file")]
    BadMagic { kind: FileKind },

    #[error("CRC-32 mismatch in {kind} file (stored {stored:#010x}, computed {computed:#010x})")]
    CrcMismatch {
        kind: FileKind,
        stored: u32,
        computed: u32,
    },

    #[error("truncated {kind} file: {detail}")]
    Truncated { kind: FileKind, detail: String },

    #[error("unsupported {kind} format version {version}")]
    UnsupportedVersion { kind: FileKind, version: u32 },

    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
