//! Reproduction harness: synthetic models, subspace metrics and the
//! Monte-Carlo experiment runner.

pub mod experiment;
pub mod metrics;
pub mod models;

pub use experiment::{
    fit_engine, log_log_slope, run_experiment, run_replicates, scaling_study, write_report, write_report_csv,
    write_report_json, ExperimentConfig, LambdaRule, ReplicateResult, ReportRow, ScalingStudy, REPORT_HEADER,
};
pub use metrics::{distance_correlation, projection_distance, projector};
pub use models::{generate_model, true_basis, ModelId, ModelSpec};
