use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("singular matrix")]
    SingularMatrix,
    #[error("non-finite matrix entry")]
    NonFiniteEntry,
    #[error("matrix flagged SL(2) has determinant {det}")]
    NotUnimodular { det: f64 },
    #[error("perturbation parameter {eps} outside {allowed}")]
    InvalidEps { eps: f64, allowed: &'static str },
    #[error("diagonal factor kappa*(1+eps*c) = {value} is not positive; eps too large")]
    NonPositiveDiagonal { value: f64 },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("E[log kappa] = {mean:e} != 0 (family is not balanced)")]
    Unbalanced { mean: f64 },
    #[error("log kappa is never positive (trivial family)")]
    Trivial,
    #[error("operation requires a {expected} family, got {found}")]
    WrongType { expected: &'static str, found: &'static str },
    #[error("logarithm argument {value} is not positive; eps not small enough")]
    LogDomain { value: f64 },
    #[error("interval [{lo}, {hi}] not contained in [-1, 1]")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("least-squares fit is degenerate: {0}")]
    DegenerateFit(String),
    #[error("csv output failed: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}
