//! Experiment orchestration behind the command-line tool: run configs,
//! dataset files, training, evaluation, report merging and the self-test.

mod commands;
mod config;
mod dataset;
mod plot;

#[cfg(test)]
mod tests;

use std::path::PathBuf;

use thiserror::Error;

pub use commands::{
    cmd_evaluate, cmd_generate, cmd_report, cmd_selftest, cmd_train, selftest_profile, CurvePoint, EvaluateOptions, RunReport, Stage,
    TrainOptions, TrainSummary, CURVE_KS,
};
pub use config::{set_dotted, Paths, RunConfig, REPORT_DIR_ENV};
pub use dataset::{read_dataset, sha256_hex, write_dataset, Dataset, Manifest, SplitEntry};
pub use plot::recall_plot_svg;

use crate::pipeline::PipelineError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("stage `{stage}` needs {what} at {path}, which does not exist")]
    Missing { stage: String, what: String, path: PathBuf },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Malformed(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("{0}")]
    Internal(String),
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Self::Io { path, source }
    }

    /// 2 for problems the user can fix, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Usage(_) | Self::Missing { .. } | Self::Io { .. } | Self::Malformed(_) => 2,
            Self::Pipeline(PipelineError::Config(_) | PipelineError::Checkpoint(_) | PipelineError::Data(_)) => 2,
            Self::Pipeline(_) | Self::Internal(_) => 1,
        }
    }

    /// Tag of the `error[<tag>]:` prefix.
    pub fn tag(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Usage(_) => "usage",
            Self::Missing { .. } => "missing",
            Self::Io { .. } => "io",
            Self::Malformed(_) => "malformed",
            Self::Pipeline(PipelineError::Config(_)) => "config",
            Self::Pipeline(PipelineError::Checkpoint(_)) => "checkpoint",
            Self::Pipeline(PipelineError::Data(_)) => "data",
            Self::Pipeline(_) | Self::Internal(_) => "internal",
        }
    }

    /// The single line printed on failure.
    pub fn line(&self) -> String {
        format!("error[{}]: {}", self.tag(), config::one_line(&self.to_string()))
    }
}
