//! Command-line harness for ccmqd: experiment configs, sweeps over the
//! table grids, CSV reports and the invariant checklist.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;
pub mod sweep;
pub mod verify;

pub use error::{CliError, Outcome};
