//! Config parsing, artifact bookkeeping and the run modes behind the
//! `plinfer` binary.

pub mod config;
pub mod error;
pub mod manifest;
pub mod run;

pub use config::{Mode, Problem, RunConfig};
pub use error::CliError;
