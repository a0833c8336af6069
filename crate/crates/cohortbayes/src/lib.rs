//! File formats, the parallel study harness and the command-line interface
//! around [`cohortbayes_core`].

pub mod alr_io;
pub mod chain_io;
pub mod commands;
pub mod config;
pub mod csv_io;
mod error;
pub mod fit;
pub mod manifest;
pub mod study;

pub use cohortbayes_core as core;
pub use error::{CliError, CliResult};
