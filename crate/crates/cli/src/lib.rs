//! Command-line harness: build grid environments, train the LSTD
//! actor-critic with exact-reachability checkpoints, and evaluate policies
//! exactly or by simulation.
//!
//! Exit codes: 0 success, 2 validation failure, 3 numerical abort, 4 I/O.

pub mod args;
pub mod commands;
pub mod config;
pub mod env;
pub mod error;

pub use args::{run, Cli};
pub use config::RunConfig;
pub use error::{CliError, CliResult};
