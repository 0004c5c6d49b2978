//! Experiment harness for capacity-constrained classification: JSON configs
//! in, one CSV row per evaluated cell and a JSON summary out.

pub mod config;
pub mod error;
pub mod oracle;
pub mod results;
pub mod runner;
pub mod summary;

pub use config::{ExperimentConfig, ExperimentKind, MethodSpec, Variant};
pub use error::{CliError, CliResult};
pub use results::{read_rows, write_rows, ResultRow};
pub use runner::{run, run_to_dir, write_outputs, RunOutput};
pub use summary::{summarize, Summary};
