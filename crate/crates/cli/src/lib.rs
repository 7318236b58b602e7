//! Library surface of the command-line crate: configuration files,
//! output writers, and the path-parallel execution backend. The
//! `interbank` binary wires these to clap subcommands.

pub mod config;
pub mod output;
pub mod runner;
