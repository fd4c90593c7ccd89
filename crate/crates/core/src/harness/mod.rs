//! Experiment orchestration: schedules, configs, side-by-side runs and CSV output.

mod check;
mod config;
mod csv;
mod experiment;
mod schedule;

pub use check::{self_check, CheckOutcome};
pub use config::{
    parse_layers, validate_arm_name, ArmConfig, DataConfig, DataSource, ExperimentConfig,
    CIFAR_SUBDIR, DATA_DIR_ENV, MNIST_SUBDIR,
};
pub use csv::{write_csv, CSV_METRICS};
pub use experiment::{
    evaluate, initial_model, load_data, run_experiment, run_experiment_with, run_on_data,
    summarize, ArmSummary, MetricsRecord, RunStatus,
};
pub use schedule::{Phase, Schedule};
