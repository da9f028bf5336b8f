//! Command implementations behind the `vaudit` binary.
//!
//! Commands talk to each other only through the run directory: `label`
//! writes a labeled corpus, the run commands write records, `stats` reads
//! records and writes fits, and `report` reads everything back.

pub mod commands;
pub mod config;

use serde_json::json;
use thiserror::Error;
use vaudit_core::agents::AgentError;
use vaudit_core::corpus::CorpusError;
use vaudit_core::metrics::MetricsError;
use vaudit_core::pipeline::PipelineError;
use vaudit_core::report::ReportError;
use vaudit_stats::StatsError;

pub use commands::{cmd_label, cmd_report, cmd_run, cmd_stats, Overrides};
pub use config::Config;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Agent(AgentError),
    #[error(transparent)]
    Pipeline(PipelineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Report(ReportError),
    #[error("run directory has no verification records")]
    EmptyRun,
    #[error("{0}")]
    Io(String),
}

impl From<AgentError> for CliError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::Config(m) => CliError::Config(m),
            e => CliError::Agent(e),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(m) => CliError::Config(m),
            PipelineError::Agent(a) => a.into(),
            e => CliError::Pipeline(e),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::EmptyRun => CliError::EmptyRun,
            e => CliError::Report(e),
        }
    }
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Corpus(_) => "corpus",
            CliError::Agent(_) => "backend",
            CliError::Pipeline(PipelineError::QuarantineExceeded { .. }) => "quarantine_exceeded",
            CliError::Pipeline(PipelineError::Unlabeled(_)) => "unlabeled",
            CliError::Pipeline(_) => "pipeline",
            CliError::Metrics(_) => "metrics",
            CliError::Stats(StatsError::NonConvergence(_)) => "non_convergence",
            CliError::Stats(_) => "stats",
            CliError::Report(_) => "report",
            CliError::EmptyRun => "empty_run",
            CliError::Io(_) => "io",
        }
    }

    /// 2 for configuration problems, 3 when too many examples failed at the
    /// backends, 4 when a model fit did not converge, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_)
            | CliError::Corpus(_)
            | CliError::Pipeline(PipelineError::Unlabeled(_)) => 2,
            CliError::Pipeline(PipelineError::QuarantineExceeded { .. }) | CliError::Agent(_) => 3,
            CliError::Stats(StatsError::NonConvergence(_)) => 4,
            _ => 1,
        }
    }

    /// One-line JSON for stderr.
    pub fn to_json(&self) -> String {
        json!({"error": self.kind(), "message": self.to_string(), "exit_code": self.exit_code()}).to_string()
    }
}
