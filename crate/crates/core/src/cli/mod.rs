//! Experiment configuration, execution and reporting.

pub mod config;
pub mod presets;
pub mod run;
