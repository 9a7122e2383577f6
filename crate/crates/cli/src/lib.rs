//! Configuration, run modes and output handling for the `simulate` binary.

pub mod config;
pub mod error;
pub mod modes;
pub mod run;

pub use config::{load_config, load_config_with_overrides, parse_config, RunConfig};
pub use error::CliError;
pub use modes::{Registry, RunContext, RunMode, RunOutcome};

/// Environment variable holding the kernel thread count.
pub const THREADS_VAR: &str = "DTC_THREADS";
