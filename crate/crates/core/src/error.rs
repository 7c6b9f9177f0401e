use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("row {row} clamps to all zeros after corruption")]
    DegenerateRow { row: usize },

    #[error("recovered row {row} has no positive entry and cannot be renormalized")]
    DegenerateRecoveredRow { row: usize },

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),

    #[error("features contain duplicate rows and gamma {gamma} is too small for a well-posed graph")]
    DegenerateFeatures { gamma: f64 },

    #[error("singular value decomposition did not converge")]
    SvdFailure,

    #[error("linear system is singular: {0}")]
    SingularSystem(&'static str),

    #[error("kernel bandwidth must be positive, got {0}")]
    Bandwidth(f64),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("not a probability distribution: {0}")]
    InvalidDistribution(String),

    #[error("rankings are perfectly consistent; the Friedman F statistic is undefined")]
    DegenerateRanks,

    #[error("unknown sweep parameter `{0}` (expected alpha, beta, gamma, kappa or nu)")]
    UnknownParameter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
