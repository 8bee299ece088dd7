//! Run configuration, tasks, the oracle suite and the `igd` commands.

pub mod commands;
pub mod config;
pub mod error;
pub mod samples;
pub mod suite;
pub mod task;

pub use config::{RunConfig, TaskConfig};
pub use error::{CliError, Result};
pub use task::Task;
