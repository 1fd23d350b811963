//! Experiment runner: TOML configuration in, CSV trajectories and a re-runnable
//! manifest out.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod run;

pub use config::{ConfigError, MethodKind, Overrides, ProblemKind, RunConfig};
pub use run::{run_experiment, Experiment, RunError, RunSummary};
