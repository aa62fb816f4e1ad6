use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient history: need {needed} lagged samples before index {index}")]
    InsufficientHistory { index: usize, needed: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("horizon of {horizon} steps exceeds the {available} supplied input vectors")]
    HorizonTooLong { horizon: usize, available: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("normal equations are rank deficient")]
    RankDeficient,

    #[error("ill-conditioned system: {0}")]
    IllConditioned(String),

    #[error(
        "simulation diverged at step {step}: zone {zone_temp:.3} degC, wall {wall_temp:.3} degC"
    )]
    Diverged {
        step: usize,
        zone_temp: f64,
        wall_temp: f64,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures that stem from numerics rather than from user input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::RankDeficient
                | Error::IllConditioned(_)
                | Error::Diverged { .. }
        )
    }
}
