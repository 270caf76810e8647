//! Replication engine, distribution tests and report emission behind the CLI.

pub mod config;
pub mod experiment;
pub mod ks;
pub mod report;

pub use config::{Dilution, DistributionConfig, ExperimentConfig, Standardization};
pub use experiment::{
    replicate_batch, replicate_standardized, run_clt_experiment, run_condition_sweep, run_counterexample,
    run_moments, run_oracle, BatchSpec, DistTestResult, OracleSummary, StandardizedSample, Statistic,
    SweepOutcome,
};
pub use ks::{ks_against, ks_distance, TargetLaw};
pub use report::{emit_report, render, OutputFormat, Report, ReportHeader};
