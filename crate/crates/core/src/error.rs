use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A treatment level or dimension outside the treatment space.
    #[error("domain error: {0}")]
    Domain(String),
    /// Inconsistent shapes: assignment indices, population sizes, empty lists.
    #[error("structural error: {0}")]
    Structural(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error at line {line}: {message}")]
    Data { line: usize, message: String },
    #[error("rank-deficient fit: {0}")]
    RankDeficient(String),
    #[error("validation infeasible: {0}")]
    ValidationInfeasible(String),
    #[error("enumeration of {count} candidate sets exceeds the cap of {cap}")]
    EnumerationCap { count: u128, cap: u128 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::EnumerationCap { .. } => 2,
            _ => 3,
        }
    }

    pub(crate) fn data(line: usize, message: impl Into<String>) -> Self {
        Error::Data {
            line,
            message: message.into(),
        }
    }
}
