//! Scenario files, data formats, parallel experiment orchestration and the
//! `gridinv` command line on top of `gridinv-core`.

pub mod config;
pub mod io;
pub mod report;
pub mod run;

pub use config::{Method, Overrides, ScenarioConfig};
pub use run::{Estimate, Experiment, SweepGrid};
