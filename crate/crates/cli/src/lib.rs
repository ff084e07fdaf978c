//! Batch front end: presets and config files in, reports, samples and traces out.

pub mod compare;
pub mod config;
pub mod error;
pub mod oracle;
pub mod outputs;
pub mod runner;

pub use config::{Method, RunConfig};
pub use error::{CliError, Result};
