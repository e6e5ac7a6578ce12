//! Command-line front end, stage-cached pipeline and HTTP survey service for
//! the `topeval` library.

pub mod commands;
pub mod error;
pub mod files;
pub mod pipeline;
pub mod service;

pub use error::{CliError, CliResult};
