use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("grid functions live on different grids")]
    GridMismatch,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("function {index} is numerically dependent on its predecessors (residual {residual:.3e})")]
    NearlyDependent { index: usize, residual: f64 },

    #[error("matrix is not positive semidefinite: pivot {index} = {pivot:.3e} after jitter {jitter:.3e}")]
    Factorization { index: usize, pivot: f64, jitter: f64 },

    #[error("degenerate process: {0}")]
    Degenerate(String),

    #[error("silt requires stationary kernel")]
    NonStationary,

    #[error("ensemble has no driving noise (produced by the exact sampler)")]
    MissingNoise,

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
