//! Simulation and moment-bound verification for jump-diffusion SDE flows
//! and their derivatives with respect to the initial condition.

pub mod cli;
pub mod constants;
pub mod error;
pub mod model;
pub mod montecarlo;
pub mod partitions;
pub mod quadrature;
pub mod rng;
pub mod simulate;

pub use error::{Error, Result};
