//! Tempered fractional Brownian motion, its third-level rough-path lift, and
//! rough differential equations driven by it.

pub mod bessel;
pub mod controlled;
pub mod error;
pub mod norms;
pub mod quadrature;
pub mod rde;
pub mod sampler;
pub mod signature;

pub use error::{Error, Result};

/// Relative tolerance used for algebraic identities of truncated signatures.
pub const ALGEBRAIC_TOL: f64 = 1e-12;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
