//! Surrogate-based Bayesian inference: Gaussian-process emulators, expected
//! posterior and expected unnormalized posterior approximations, approximate
//! MCMC samplers, benchmark inverse problems and comparison diagnostics.

pub mod error;
pub mod gp;
pub mod linalg;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub mod linear_gaussian;
pub mod posterior;
pub mod problems;
pub mod samplers;
pub mod diagnostics;
pub mod experiment;
