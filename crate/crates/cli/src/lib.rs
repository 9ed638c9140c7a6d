//! Batch runner: reads an experiment config, runs it, and writes results,
//! tables, plots and a manifest.

// `!(x > 0.0)` style checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod output;
pub mod report;
pub mod run;

pub use config::{ExperimentConfig, Mode};
pub use report::render_report;
pub use run::{run, RunError, RunSummary};
