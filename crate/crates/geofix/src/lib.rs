//! File formats, configuration, parallel execution and the subcommands behind the `geofix` binary.

pub mod atlas;
pub mod catalog;
pub mod config;
pub mod diag;
pub mod error;
pub mod fetch;
pub mod parallel;
pub mod pipeline;
pub mod score_cmd;
pub mod snapshot;
pub mod synth_cmd;

pub use error::{Error, Result};
