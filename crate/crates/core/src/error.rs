//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Coarse error classes, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Malformed or inconsistent input data and configuration.
    Input,
    /// Embedding service or network failure.
    Transport,
    /// Non-finite values or divergence during computation.
    Numeric,
    /// Filesystem and persistence failures.
    Storage,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("structural error: {0}")]
    Structure(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite value at index {index}: {detail}")]
    Numeric { index: usize, detail: String },

    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("{}:{line}: {detail}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("duplicate ids: {}", .0.join(", "))]
    DuplicateIds(Vec<String>),

    #[error("missing ids: {}", .0.join(", "))]
    MissingIds(Vec<String>),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("cache miss in offline mode: {count} text(s) not cached for embedder '{embedder}'")]
    CacheMiss { embedder: String, count: usize },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("run '{0}' already exists (pass overwrite to replace it)")]
    RunExists(String),

    #[error("run '{0}' not found")]
    RunNotFound(String),

    #[error("fingerprint mismatch: stored {stored}, requested {requested}")]
    FingerprintMismatch { stored: String, requested: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Numeric { .. } | Error::Divergence { .. } => ErrorClass::Numeric,
            Error::Transport(_) | Error::CacheMiss { .. } => ErrorClass::Transport,
            Error::Io(_)
            | Error::RunExists(_)
            | Error::RunNotFound(_)
            | Error::FingerprintMismatch { .. } => ErrorClass::Storage,
            _ => ErrorClass::Input,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
