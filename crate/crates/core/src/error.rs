use alloc::string::String;
use core::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    DimensionMismatch {
        expected: usize,
        found: usize,
    },
    ZeroVector,
    NonFiniteValue {
        id: String,
    },
    DuplicateId(String),
    /// Two per-question lists that must be aligned on the same test questions are not.
    Alignment(String),
    UnresolvableExemplar(String),
    DanglingLabel(String),
    UnknownModelId(String),
    EmptyInput(&'static str),
    GroundTruthUnexecutable {
        sql: String,
        reason: String,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::ZeroVector => f.write_str("cosine similarity of a zero vector"),
            Error::NonFiniteValue { id } => write!(f, "vector {id} has a non-finite component"),
            Error::DuplicateId(id) => write!(f, "duplicate id {id}"),
            Error::Alignment(msg) => write!(f, "alignment error: {msg}"),
            Error::UnresolvableExemplar(id) => write!(f, "exemplar {id} has no label"),
            Error::DanglingLabel(id) => write!(f, "label {id} refers to no question"),
            Error::UnknownModelId(id) => write!(f, "unknown model id {id}"),
            Error::EmptyInput(what) => write!(f, "{what} must not be empty"),
            Error::GroundTruthUnexecutable { sql, reason } => {
                write!(f, "ground-truth query failed ({reason}): {sql}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
