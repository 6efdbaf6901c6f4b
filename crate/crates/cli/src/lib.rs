//! Command-line front end for the deep transfer network: run manifests,
//! reports, parameter sweeps and timing series.
//!
//! Every subcommand of the `dtn` binary is a plain function in [`commands`],
//! so tests and scripts can drive runs without spawning a process.

pub mod commands;
pub mod error;
pub mod manifest;
pub mod report;

pub use error::{CliError, CliResult, EXIT_INPUT, EXIT_NUMERICAL, EXIT_OK};
pub use manifest::{Architecture, DataSpec, FileSource, Overrides, Resize, RunManifest};
pub use report::{load_model, save_model, RunReportFile};
