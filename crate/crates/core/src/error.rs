use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("atoms {first} and {second} overlap without being identical; split them first")]
    PartialOverlap { first: usize, second: usize },

    #[error("intervals I_{first} and I_{second} are not disjoint")]
    NotDisjoint { first: usize, second: usize },

    #[error("coincident centers at indices {first} and {second}")]
    SingularPair { first: usize, second: usize },

    #[error("quadrature budget of {budget} evaluations exceeded (best estimate {best:e})")]
    BudgetExceeded { budget: usize, best: f64 },

    #[error("need centers through index {required}, only {available} available")]
    InsufficientData { required: usize, available: usize },

    #[error("no admissible level up to n = {last_level}: occupancy reached {occupancy:.4}")]
    LevelExhaustion { last_level: usize, occupancy: f64 },

    #[error("equilibrium system is singular ({panels} panels); try refining or dropping degenerate intervals")]
    SingularSystem { panels: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }
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

pub type Result<T> = std::result::Result<T, Error>;
