use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AxeError {
    #[error("empty vocabulary")]
    EmptyVocabulary,
    #[error("reserved token {0:?}")]
    ReservedToken(String),
    #[error("duplicate token {0:?}")]
    DuplicateToken(String),
    #[error("unknown token {0:?}")]
    UnknownToken(String),
    #[error("empty sequence")]
    EmptySequence,
    #[error("token id {id} at position {pos} is out of range for vocabulary of size {size}")]
    TokenOutOfRange { pos: usize, id: usize, size: usize },
    #[error("reserved token id {id} at position {pos} is not allowed here")]
    ReservedId { pos: usize, id: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },
    #[error("instance exceeds oracle scale (n={n}, m={m}, limit {limit})")]
    OracleScale { n: usize, m: usize, limit: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for AxeError {
    fn from(e: std::io::Error) -> Self {
        AxeError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, AxeError>;

pub(crate) fn config_err(field: &str, reason: impl Into<String>) -> AxeError {
    AxeError::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}
