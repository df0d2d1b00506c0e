//! Simulation and numerical checks for products of i.i.d. random 2×2 matrices
//! near balanced hyperbolic critical points.

pub mod cocycle;
pub mod comparison;
pub mod dynamics;
pub mod error;
pub mod estimators;
pub mod mat2;
pub mod models;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
