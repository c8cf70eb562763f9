//! Command-line pipeline: synthesize or ingest clips, train, extract
//! signatures, evaluate, sweep and visualize decodes.

pub mod cli;
pub mod commands;
pub mod config;
pub mod report;
pub mod viz;

pub use cli::{run, Cli, Command};
pub use config::{Overrides, RunConfig};
