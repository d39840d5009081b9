use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parameter out of range: {0}")]
    Parameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("measure is not symmetric: weight at {location} has no matching weight at {mirror}")]
    Asymmetric { location: f64, mirror: f64 },

    #[error("measure weights sum to {total}, expected 1")]
    Normalization { total: f64 },

    #[error("invalid measure: {0}")]
    Measure(String),

    #[error("even moments match 1/(2j+1) up to the cap j = {cap}; the measure looks degenerate")]
    EllExceedsCap { cap: u32 },

    #[error("coefficient overflow: r = {r} exceeds the cap {cap}")]
    Overflow { r: u32, cap: u32 },

    #[error("correlation out of range: |cov| = {cov} exceeds sqrt(var_a var_b) = {bound}")]
    Correlation { cov: f64, bound: f64 },

    #[error("matrix is not positive semidefinite: pivot {index} = {pivot:e}")]
    NotPsd { index: usize, pivot: f64 },

    #[error("grid too large: {n_incr} increments exceeds the cap {cap}")]
    GridTooLarge { n_incr: usize, cap: usize },

    #[error("off the critical regime: alpha (2 ell + 1) = {product} (ell = {ell})")]
    Regime { ell: u32, product: f64 },

    #[error("f has derivatives up to order {available}, order {required} requested")]
    DerivativeOrder { required: usize, available: usize },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("sample too small: {size} < {min}")]
    SampleSize { size: usize, min: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
