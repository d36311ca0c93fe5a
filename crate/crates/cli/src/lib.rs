pub mod config;
pub mod error;
pub mod experiment;
pub mod files;
pub mod plotdata;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use experiment::{run_experiment, write_outputs, ExperimentOutput, ResultRow};
pub use files::{fit_file, predict_file};
pub use plotdata::emit_plot_data;
