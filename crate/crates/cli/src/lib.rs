//! Batch driver behind the `gbulab` binary: configuration parsing and
//! dispatch of the experiment verbs.

pub mod config;
pub mod dispatch;

pub use config::{parse_config, ConfigError, ExperimentKind, RunConfig};
pub use dispatch::{dispatch, CliError, Options, Summary, TrajectoryFile, Verb};
