//! Bayesian estimation of generator inertias from transient bus-voltage
//! measurements.
//!
//! The crate is `no_std` (with `alloc`) and contains only numerics: the
//! two-axis machine / network DAE, an implicit trapezoidal integrator with
//! its discrete adjoint, a bounded L-BFGS minimizer, Laplace posterior
//! estimation and a polynomial-chaos surrogate pipeline. File formats, the
//! CLI and parallel orchestration live in the `gridinv` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod adjoint;
pub mod bayes;
pub mod dae;
pub mod error;
pub mod integrator;
mod math;
pub mod model;
pub mod observation;
pub mod optimizer;
pub mod pce;
pub mod powerflow;
pub mod rng;
pub mod scenario;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};

/// The WSCC 3-machine, 9-bus data set shipped with the crate (TOML).
pub const WSCC9_DATA: &str = include_str!("../data/wscc9.toml");
