//! Command-line front end: scenario files, presets and solver dispatch.

pub mod config;
pub mod presets;
pub mod run;
