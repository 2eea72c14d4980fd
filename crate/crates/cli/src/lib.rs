//! Command-line harness: experiment configuration, task dispatch and result
//! files for the `disco` binary.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod results;

pub use config::{ExperimentConfig, Task};
pub use error::{CliError, CliResult};
pub use experiment::{run_experiment, ExperimentOutput};
pub use results::{ResultRow, ResultTable};
