//! Experiment runner: a registry of named experiments, each resolved from
//! defaults, an optional TOML config file and command-line overrides, and
//! writing CSV artifacts plus `summary.json` into an output directory.

pub mod config;
pub mod experiments;
pub mod registry;
pub mod summary;
