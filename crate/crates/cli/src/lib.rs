//! Batch driver for collapse-core: config parsing, file formats and subcommands.

pub mod commands;
pub mod config;
pub mod failure;
pub mod output;

pub use failure::Failure;
