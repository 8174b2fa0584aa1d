use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("operator is not Hermitian (max |H - H†| = {deviation:e})")]
    NonHermitianInput { deviation: f64 },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("invalid lattice model variant {0}, expected 0 or 1")]
    InvalidVariant(u8),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("no cost entry for generator {0}")]
    MissingCost(String),

    #[error("cost for generator {pauli} must be positive, got {cost}")]
    NonPositiveCost { pauli: String, cost: f64 },

    #[error("sampling probability of term {index} is zero while its coefficient is positive")]
    UnboundedWeight { index: usize },

    #[error("map is not trace preserving (deviation {deviation:e})")]
    NotTracePreserving { deviation: f64 },

    #[error("epsilon {epsilon} outside the admissible range (0, {max}]")]
    EpsilonOutOfRange { epsilon: f64, max: f64 },

    #[error("commutator weight is zero; the optimal sample count diverges")]
    ZeroCommutatorTerm,

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
