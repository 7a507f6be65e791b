//! Experiment runner: TOML configuration, dispatch to the numerical modules,
//! and CSV/JSON/plot-data output.

pub mod config;
pub mod error;
pub mod output;
pub mod run;

pub use config::{ExperimentConfig, Kind};
pub use error::CliError;
pub use output::{emit_plotdata, write_report};
pub use run::{run, RunReport, Verdict};
