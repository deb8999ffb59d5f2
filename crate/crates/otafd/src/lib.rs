//! Experiment harness for differentially private over-the-air federated
//! distillation: configuration files, the drivers behind the `otafd` CLI,
//! result files and the numerical self-checks.

pub mod checks;
pub mod config;
pub mod error;
pub mod experiment;
pub mod output;

pub use error::{Error, Result};
