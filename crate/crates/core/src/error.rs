use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("transcript size mismatch: expected {expected} bits, found {found}")]
    BitSizeMismatch { expected: usize, found: usize },

    #[error("bit budget exceeded: machine {machine} sent {bits} bits, budget is {budget}")]
    BudgetExceeded { machine: usize, bits: usize, budget: u32 },

    #[error("insufficient budget: {0}")]
    InsufficientBudget(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("protocol {0} requires a public coin")]
    MissingCoin(String),

    #[error("uncalibrated protocol: {0}")]
    Uncalibrated(String),

    #[error("transcript alphabet of {bits} bits is too large for enumeration (limit {limit})")]
    AlphabetTooLarge { bits: u32, limit: u32 },

    #[error("empty grid: {0}")]
    EmptyGrid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
