use thiserror::Error;

#[derive(Debug, Error)]
pub enum LpError {
    #[error("solver backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("numerical failure in solver: {0}")]
    NumericalFailure(String),
    #[error("malformed program: {0}")]
    Malformed(String),
    #[error("LP format parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}
