//! Monte Carlo reliability simulator for RAID and PMDS disk arrays.
//!
//! Estimates the normalized magnitude of data unavailability (NOMDU) and data
//! loss (NOMDL) under disk failures, latent sector errors, scrubbing, human
//! errors during disk replacement, hot-spare policies and backup survivability.
//! A continuous-time Markov model of the RAID5 case is included for comparison.

pub mod array_config;
pub mod distributions;
pub mod error;
pub mod experiments;
pub mod failure_conditions;
pub mod markov_baseline;
pub mod metrics;
pub mod sim_engine;

pub use error::{Error, Result};
