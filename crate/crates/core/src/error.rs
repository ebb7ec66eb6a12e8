use thiserror::Error;

use crate::model::Family;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("family mismatch: expected {expected}, found {found}")]
    FamilyMismatch { expected: Family, found: Family },

    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate problem: {0}")]
    Degenerate(String),

    #[error("linear predictor exceeded the admissible cap {cap} (max {observed})")]
    Divergence { cap: f64, observed: f64 },

    #[error("construction failed: {0}")]
    Construction(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
