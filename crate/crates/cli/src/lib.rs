//! Batch front end for the delay-equation laboratory. The binary parses an
//! experiment config, runs one pipeline stage (or the whole chain) and
//! writes CSV tables plus SVG line plots into the output directory. All
//! logic lives in this library so integration tests can drive it without
//! spawning processes.

pub mod commands;
pub mod config;
pub mod csvio;
pub mod svg;

pub use commands::{run, Command, RunOptions};
pub use config::ExperimentConfig;
