//! Experiment harness around [`fedwagg_core`]: CSV ingestion, seeded runs with
//! wall-clock metering, and report rendering.

pub mod dataset;
pub mod experiment;
pub mod report;

pub use dataset::{load_dataset, DatasetError};
pub use experiment::{
    run_experiment, DataSource, Experiment, ExperimentError, ExperimentSpec, MetricsReport,
    RunReport, RunStatus, StepRow, WallClock,
};
pub use report::{emit_report, render, Format, ReportError};
