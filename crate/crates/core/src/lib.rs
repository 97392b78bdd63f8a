//! Local polynomial estimation of a regression function and its derivatives
//! from repeated noisy curves, with exact and asymptotic risk calculations,
//! bandwidth selectors and a Monte Carlo laboratory.

pub mod asymptotics;
pub mod bandwidth;
pub mod covariance;
pub mod design;
pub mod error;
pub mod kernels;
pub mod locpoly;
pub mod quadrature;
pub mod simlab;

pub use error::{Error, Result};
