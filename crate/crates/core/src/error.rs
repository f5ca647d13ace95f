use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: unknown tag `{tag}`")]
    UnknownTag { line: usize, tag: String },

    #[error("sentence {sentence}, token {token}: {reason}")]
    Validation {
        sentence: usize,
        token: usize,
        reason: String,
    },

    #[error("sentence {sentence} has no `{layer}` layer")]
    MissingLayer { sentence: usize, layer: String },

    #[error("invalid label set: {0}")]
    LabelSet(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("{function} is undefined at {value}")]
    Domain { function: &'static str, value: f64 },

    #[error("non-finite value at iteration {iteration}: {message}")]
    Numerical { iteration: usize, message: String },

    #[error("no usable sources: every retained score is zero")]
    NoUsableSources,
}

/// Coarse error class, used to map failures onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Usage,
            Error::Domain { .. } | Error::Numerical { .. } => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }
}
