//! Exact oracles and Monte Carlo experiments for odd power variations and
//! symmetric Riemann sums of self-similar Gaussian processes.

pub mod audit;
pub mod cli;
pub mod covariance;
pub mod error;
pub mod functions;
pub mod hermite;
pub mod montecarlo;
pub mod numerics;
pub mod process;
pub mod quadrature;
pub mod rng;
pub mod statistics;

pub use error::{Error, Result};
pub use process::{Family, ProcessModel};
pub use quadrature::SymmetricMeasure;
