//! Library half of the `coord` command-line tool: event-log ingestion,
//! synthetic corpora, run manifests and subcommand execution.

pub mod args;
pub mod commands;
mod error;
pub mod ingest;
pub mod manifest;
pub mod synth;

pub use error::{CliError, CliResult};
