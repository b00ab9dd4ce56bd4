use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("basis mismatch: operands truncated at different levels ({0} vs {1})")]
    BasisMismatch(usize, usize),

    #[error("singular matrix at frequency k={k}: reciprocal condition number {rcond:.3e}")]
    Singular { k: usize, rcond: f64 },

    #[error("matrix at frequency k={k} is not symmetric positive definite")]
    NotPositiveDefinite { k: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("series diverges: {0}")]
    DivergentSeries(String),

    #[error("mgf argument t={t} at or above validity bound {bound}")]
    MgfBound { t: f64, bound: f64 },

    #[error("quadrature did not reach requested tolerance: achieved {achieved:.3e}")]
    Quadrature { achieved: f64 },

    #[error("quantile bracket failure: {0}")]
    Bracket(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
