//! Demographic-parity fair regression through Wasserstein barycenter
//! transport maps, estimated by minimizing the multiple correlation over
//! congruent piecewise-linear families.

pub mod cli;
pub mod error;
pub mod estimator;
pub mod maps;
pub mod measures;
pub mod metrics;
pub mod potentials;
pub mod regression;
pub mod synth;

pub use error::{Error, Result};
