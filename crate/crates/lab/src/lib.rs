//! Convergence experiments for tempered fractional Brownian rough paths: decay rates of
//! refinement differences, the lift distance proxy, covariance checks and RDE refinement.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod output;
pub mod stats;

pub use error::{LabError, LabResult};
