//! Experiment harness: configuration, experiment drivers, result tables and
//! the `autoloss` command line.

pub mod config;
pub mod csvio;
pub mod commands;
pub mod experiments;
