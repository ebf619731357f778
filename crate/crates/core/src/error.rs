use cpomdp_lp::{LpError, SolveStatus};
use thiserror::Error;

use crate::model::Violation;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("observation {theta} has zero likelihood at epoch {t}, action {a}")]
    ZeroLikelihood { t: usize, a: usize, theta: usize },

    #[error("model is invalid ({} violation(s)); first: {}", .0.len(), .0.first().map(|v| v.to_string()).unwrap_or_default())]
    InvalidModel(Vec<Violation>),

    #[error("model document: {0}")]
    ModelFormat(String),

    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("resource bound exceeded: {0}")]
    ResourceBound(String),

    #[error("grid does not span the simplex: {0}")]
    Span(String),

    #[error("gap undefined for a zero lower bound")]
    DivisionByZero,

    #[error("solver returned {status:?}: {context}")]
    Solver { status: SolveStatus, context: String },

    #[error("policy has no entry for epoch {t}, grid point {k}")]
    PolicyDomain { t: usize, k: usize },

    #[error("table cache: {0}")]
    Cache(String),

    #[error(transparent)]
    Lp(#[from] LpError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
