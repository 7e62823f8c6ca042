//! Stage orchestration, artifacts and the run manifest.
//!
//! Each stage reads named artifacts from the artifact directory (or input
//! files), writes its own artifacts atomically, and records digests, seed,
//! timing and counters in `manifest.json`. A stage refuses to consume an
//! artifact produced under a different configuration unless forced.

mod config;
mod manifest;
mod stages;

pub use config::{EvalConfig, PathsConfig, PipelineConfig, RecallConfig, Threads};
pub use manifest::{RunManifest, StageRecord};
pub use stages::{run, run_stage, Artifact, RunOptions, Stage};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing artifact: {name}")]
    MissingArtifact { name: String },
    #[error("artifact {artifact} was produced by stage {stage} under a different config (rerun it or pass --force)")]
    ConfigMismatch { stage: String, artifact: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl PipelineError {
    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::ConfigMismatch { .. } => 2,
            PipelineError::MissingArtifact { .. } => 3,
            PipelineError::Data(_) | PipelineError::Io { .. } => 4,
        }
    }

    pub(crate) fn data(e: impl std::fmt::Display) -> Self {
        PipelineError::Data(e.to_string())
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        PipelineError::Io { path: path.display().to_string(), source }
    }
}
