//! Simulation and asymptotics for the stationary fluid queue fed by
//! fractional Brownian motion: sojourn-time probabilities by Monte Carlo,
//! the Brownian closed forms, and the Pickands and Berman-type constants.

pub mod asymptotics;
pub mod berman;
pub mod brownian_exact;
pub mod error;
pub mod gaussian_paths;
pub mod harness;
pub mod rng;
mod serde_ext;
pub mod stats;
pub mod workload;

pub use error::{Error, Result};
pub use gaussian_paths::{HurstParam, TimeGrid};
pub use stats::MonteCarloEstimate;
pub use workload::QueueParams;
