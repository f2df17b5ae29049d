//! Files, threads and the command line around `metareward-core`.
//!
//! * [`config`]: the flat `key = value` run configuration and its hash.
//! * [`container`]: binary parameter checkpoints with JSON sidecars.
//! * [`lifelog`]: binary lifetime logs and their CSV summaries.
//! * [`parallel`]: the rayon executor and the `METAREWARD_THREADS` cap.
//! * [`report`]: evaluation CSVs, aggregated curves and SVG charts.
//! * [`commands`]: the work behind each subcommand.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod container;
pub mod error;
pub mod lifelog;
pub mod parallel;
pub mod report;

pub use config::RunConfig;
pub use error::{Error, Result};
