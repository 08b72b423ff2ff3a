//! Single and aggregated kernel tests for detecting a signal in Gaussian
//! nonparametric regression, with Monte Carlo calibration and a simulation
//! harness.

pub mod baselines;
pub mod calibrate;
pub mod cli;
pub mod datagen;
pub mod error;
pub mod harness;
pub mod kernels;
pub mod procedures;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
