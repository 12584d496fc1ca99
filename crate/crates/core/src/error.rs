use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("coefficient constraint violated at ({i},{j}): |alpha| = {value} is not below {bound}")]
    Constraint { i: u64, j: u64, value: f64, bound: f64 },

    #[error("state ({i},{j}) is outside the wedge 0 <= i <= j")]
    OutsideWedge { i: u64, j: u64 },

    #[error("invalid field: {0}")]
    InvalidField(String),

    #[error("diagonal m={m} does not contract (last ratio {ratio})")]
    NonContracting { m: u64, ratio: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("expression error: {0}")]
    Expression(String),

    #[error("solver diverged after {iterations} sweeps (residual {residual})")]
    Divergence { iterations: usize, residual: f64 },

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("origin starved: {0}")]
    Starvation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io: {0}")]
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
