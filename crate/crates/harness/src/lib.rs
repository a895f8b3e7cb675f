//! Experiment runner for the asr-smooth defense: a JSON-configured grid of
//! evaluations, attacks, ablations and certification runs on the toy corpus,
//! written out as CSV tables, gnuplot curves and a provenance manifest.

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;
pub mod runner;

pub use config::{ExperimentConfig, Preset};
pub use error::{HarnessError, Result};
pub use runner::{run, Command};
