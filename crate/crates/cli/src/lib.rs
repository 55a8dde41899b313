//! Library side of the `ecvit` binary: configuration, commands and exit
//! codes.

pub mod commands;
pub mod config;
pub mod error;
