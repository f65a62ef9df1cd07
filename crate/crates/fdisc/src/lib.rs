//! File formats, artifact bookkeeping and subcommands around `fdisc-core`.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use error::{CliError, Result};
