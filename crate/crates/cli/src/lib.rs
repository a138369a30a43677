//! File formats, model archives, reports and the `jket` command line around
//! `jket-core`.

pub mod archive;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod glove;
pub mod models;
pub mod parallel;
pub mod readers;
pub mod report;

pub use cli::run;
pub use error::{CliError, Result};
