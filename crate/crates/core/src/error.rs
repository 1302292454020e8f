use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// The four failure classes every service operation maps onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorClass {
    Validation,
    Permission,
    NotFound,
    State,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("validation failed: {}", .0.join("; "))]
    Violations(Vec<String>),

    #[error("permission denied: {0}")]
    Permission(String),

    #[error("{kind} not found: {id}")]
    NotFound { kind: &'static str, id: String },

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("illegal state: {0}")]
    State(String),

    #[error("reference error: {0}")]
    Reference(String),

    #[error("store corrupted: {0}")]
    Corrupt(String),

    #[error("store at {0} is locked by another process")]
    Locked(PathBuf),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub fn not_found(kind: &'static str, id: impl ToString) -> Self {
        Error::NotFound {
            kind,
            id: id.to_string(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Buckets the error into one of the four externally visible classes.
    /// Infrastructure faults (I/O, corruption, locking) surface as state errors.
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Validation(_) | Error::Violations(_) | Error::Reference(_) => {
                ErrorClass::Validation
            }
            Error::Permission(_) => ErrorClass::Permission,
            Error::NotFound { .. } => ErrorClass::NotFound,
            Error::Conflict(_)
            | Error::State(_)
            | Error::Corrupt(_)
            | Error::Locked(_)
            | Error::Io { .. } => ErrorClass::State,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
