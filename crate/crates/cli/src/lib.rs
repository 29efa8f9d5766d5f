//! Library surface of the CLI: configuration parsing and the subcommand
//! implementations, kept separate from the binary for testing.

pub mod commands;
pub mod config;
