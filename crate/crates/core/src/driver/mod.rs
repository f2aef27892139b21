//! Batch orchestration: verifier configuration, subprocess runs and reports.

pub mod config;
pub mod pipeline;
pub mod report;
pub mod runner;

pub use config::{load_config, parse_config, ConfigError, VerifierConfig, CONFIG_ENV};
pub use pipeline::{analyze_contract, run_pipeline, CodeMode, Options, PipelineError};
pub use report::{render_report, FunctionStatus, FunctionVerdict, Report, ReportFormat, Status};
pub use runner::{parse_verifier_output, run_verifier, RawRun, VerifierStatus};
