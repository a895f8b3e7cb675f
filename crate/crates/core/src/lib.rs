//! Randomized-smoothing defense for a toy CTC speech recognizer: signal
//! utilities, ASNR enhancement, the recognizer, output voting, smoothing,
//! adaptive attacks and WER-threshold certification.

pub mod attacks;
pub mod certify;
pub mod enhance;
pub mod error;
pub mod recognizer;
pub mod signal;
pub mod smoothing;
pub mod voting;

pub use error::{Error, Result};

/// Crate version, recorded in experiment manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
