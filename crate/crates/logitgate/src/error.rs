//! Error type shared across the crate.

use std::path::PathBuf;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure categories, used by callers (notably the CLI) to map
/// errors onto distinct exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Invalid configuration or invariant violation at construction time.
    Config,
    /// Missing environment prerequisites (API keys, unreachable servers).
    Environment,
    /// Stored data failed an integrity check (hash mismatch, tampering).
    Integrity,
    /// Anything else: runtime, I/O, transport.
    Runtime,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid {field}: {reason}")]
    InvalidField { field: String, reason: String },

    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },

    #[error("all candidate tokens are suppressed: empty sampling support")]
    EmptySupport,

    #[error("unknown state label {0:?}")]
    UnknownState(String),

    #[error("cannot resolve token {spec:?}: {reason}")]
    TokenResolution { spec: String, reason: String },

    #[error("dataset {path}: {reason}")]
    Dataset { path: PathBuf, reason: String },

    #[error("dataset {path} line {line}: {reason}")]
    DatasetLine {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("configuration {path}: {reason}")]
    Config { path: PathBuf, reason: String },

    #[error("environment: {0}")]
    Environment(String),

    #[error("integrity failure for record {record_id}: {reason}")]
    Integrity { record_id: String, reason: String },

    #[error("transport failure after {attempts} attempts: {last}")]
    Transport { attempts: usize, last: String },

    #[error("server rejected request ({status}): {body}")]
    ServerRejected { status: u16, body: String },

    #[error("token identity mismatch: {0}")]
    TokenIdentityMismatch(String),

    #[error("classifier: {0}")]
    Classifier(String),

    #[error("report: {0}")]
    Report(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid_field(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidField {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Category of this error, for exit-code mapping. A malformed dataset
    /// referenced by a config counts as a configuration problem.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidField { .. }
            | Error::TokenOutOfRange { .. }
            | Error::Config { .. }
            | Error::TokenResolution { .. }
            | Error::Dataset { .. }
            | Error::DatasetLine { .. }
            | Error::ServerRejected {
                status: 400..=499, ..
            } => ErrorKind::Config,
            Error::Environment(_) => ErrorKind::Environment,
            Error::Integrity { .. } | Error::TokenIdentityMismatch(_) => ErrorKind::Integrity,
            _ => ErrorKind::Runtime,
        }
    }
}
