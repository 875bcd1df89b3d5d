//! Experiment configuration, sweep orchestration, verification batteries,
//! and result persistence.

mod checks;
mod config;
mod output;
mod sweep;

use thiserror::Error;

pub use checks::{bounds_check, linear_check, CheckLine, CheckReport};
pub use config::{ExperimentConfig, ExperimentKind, IdxPaths, SCHEMA_VERSION};
pub use output::{
    csv_string, emit_csv, emit_json, emit_plot_csv, fmt_f64, parse_csv, parse_csv_file,
    tidy_plot_csv, CSV_HEADER,
};
pub use sweep::{load_sweep_data, resolve_master_seed, run_sweep, tune_step_size, SweepRow};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(String),
    #[error("every step-size candidate diverged")]
    AllCandidatesDiverged,
    #[error(transparent)]
    Num(#[from] crate::numkit::NumError),
    #[error(transparent)]
    Data(#[from] crate::datasets::DataError),
    #[error(transparent)]
    Train(#[from] crate::nnet::TrainError),
    #[error(transparent)]
    Estimator(#[from] crate::estimators::EstimatorError),
    #[error(transparent)]
    Lin(#[from] crate::lintheory::LinError),
    #[error(transparent)]
    Bounds(#[from] crate::bounds::BoundsError),
}
