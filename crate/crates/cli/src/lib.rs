//! Command-line front end for `meq-core`: CSV and JSON formats, the family
//! catalogue, run configuration and the benchmark harness.

pub mod app;
pub mod bench;
pub mod config;
mod error;
pub mod family;
pub mod io;
pub mod report;

pub use app::cli_main;
pub use error::{CliError, Result};
