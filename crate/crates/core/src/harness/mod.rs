//! Configuration ingestion, experiment orchestration and CSV reports.

pub mod config;
pub mod experiment;
pub mod report;

pub use config::{ExperimentConfig, Scheme};
pub use experiment::{
    evaluate_for, evaluate_scheme, run_capacity_sweep, run_convergence, train, train_observed, Checkpoint,
    ConvergenceReport, TrainingRun,
};
pub use report::{emit_csv, read_convergence, read_csv, write_convergence, write_sweep, MetricsRow, SweepRow};
