use thiserror::Error;

/// Errors raised by the recovery engine and its experiment harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("point {0:?} is not inside the domain")]
    OutsideDomain(Vec<f64>),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("probe set is empty; the region is too thin for the requested resolution")]
    EmptyProbeSet,

    #[error("rejection sampling gave up after {0} attempts")]
    RejectionLimit(u64),

    #[error("insufficient points for the polynomial space: need {needed}, have {have}")]
    InsufficientPoints { needed: usize, have: usize },

    #[error("moving least squares system is numerically singular (condition {0:.3e})")]
    SolveFailure(f64),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("sample budget {n} is below the minimum {min}")]
    BudgetTooSmall { n: usize, min: usize },

    #[error("cannot pack {0} disjoint bumps inside the domain")]
    InfeasiblePacking(usize),

    #[error("rate fit needs at least 3 usable points, got {0}")]
    TooFewPoints(usize),

    #[error("derivative oracle of order {0} is not available")]
    MissingOracle(usize),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
