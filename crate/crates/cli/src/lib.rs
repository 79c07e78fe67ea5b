//! Operator surface for cross-AP channel-gain map inference: dataset
//! generation, training, evaluation, single-shot inference and the HTTP
//! service.

pub mod commands;
pub mod config;
pub mod error;
pub mod service;

pub use commands::{run, Cli};
pub use config::RunConfig;
pub use error::CliError;
