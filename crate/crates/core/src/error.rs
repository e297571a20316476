use thiserror::Error;

/// Errors raised by targets, kernels, drivers and the variance oracle.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid target: {0}")]
    InvalidTarget(String),

    #[error("invalid temperature ladder: {0}")]
    InvalidLadder(String),

    #[error("level {level} out of range for a ladder with {levels} levels")]
    LevelOutOfRange { level: usize, levels: usize },

    #[error("level 0 has no importance weight")]
    NoImportanceWeight,

    #[error("energy is not finite at the given state")]
    NonFiniteEnergy,

    #[error("state dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("cannot draw from an empty reservoir")]
    EmptyReservoir,

    #[error("non-finite importance weight at reservoir index {index}")]
    NonFiniteWeight { index: usize },

    #[error("target has no exact sampler for the tempered distribution")]
    MissingExactSampler,

    #[error("kappa = {kappa} must lie in (0, {sup}) for the theta bound to be defined")]
    KappaTooLarge { kappa: f64, sup: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not row-stochastic: row {row} sums to {sum}")]
    NotStochastic { row: usize, sum: f64 },

    #[error("singular linear system ({0}); the chain is likely reducible")]
    SingularSystem(&'static str),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
