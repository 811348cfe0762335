//! Command-line front end: JSON run configuration, file formats, and the
//! `simulate`, `fit`, `detect` and `diagnose` commands.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use config::RunConfig;
pub use error::{CliError, Result};
