//! Stage-by-stage orchestration: dataset, DDPM, primary content, dissimilarity
//! inputs, evaluator training and scoring. Every stage writes into its own
//! directory under the run root together with a `provenance.json`.

mod config;
mod provenance;
mod report;
mod stages;

use thiserror::Error;

pub use config::{DdpmSection, EvaluatorSection, ExperimentConfig, PathsConfig, PrepConfig, SplitConfig, SplitTag};
pub use provenance::{digest, Provenance, VERSION};
pub use report::{read_summaries, write_method_table, QualityRecord, SplitSummary};
pub use stages::{
    evaluate, infer_primary, metrics_table, mode_name, prep_image, run_all, simulate, train_ddpm_stage,
    train_evaluator_stage, write_dissim, ConditionSsim, Layout, RunOptions, StageStatus,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("missing upstream artifact: {0}")]
    MissingUpstream(String),
    #[error("artifact mismatch: {0}")]
    Mismatch(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("{0}")]
    Internal(String),
}

impl PipelineError {
    /// Process exit code for this failure class.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Io(_) => 3,
            PipelineError::MissingUpstream(_) | PipelineError::Mismatch(_) => 4,
            PipelineError::Diverged(_) => 5,
            PipelineError::Internal(_) => 1,
        }
    }
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        PipelineError::Io(e.to_string())
    }
}

impl From<csv::Error> for PipelineError {
    fn from(e: csv::Error) -> Self {
        PipelineError::Io(e.to_string())
    }
}

impl From<crate::image::ImageError> for PipelineError {
    fn from(e: crate::image::ImageError) -> Self {
        PipelineError::Io(e.to_string())
    }
}

impl From<crate::ctsim::CtSimError> for PipelineError {
    fn from(e: crate::ctsim::CtSimError) -> Self {
        use crate::ctsim::CtSimError as E;
        match e {
            E::Config(m) => PipelineError::Config(m),
            E::Io(_) | E::Csv(_) | E::Image(_) => PipelineError::Io(e.to_string()),
            other => PipelineError::Internal(other.to_string()),
        }
    }
}

impl From<crate::diffusion::DiffusionError> for PipelineError {
    fn from(e: crate::diffusion::DiffusionError) -> Self {
        use crate::diffusion::DiffusionError as E;
        match e {
            E::DivergedLoss { .. } | E::NonFinite { .. } => PipelineError::Diverged(e.to_string()),
            E::InvalidSpec(_) | E::InvalidRange(_) => PipelineError::Config(e.to_string()),
            other => PipelineError::Internal(other.to_string()),
        }
    }
}

impl From<crate::evaluator::EvaluatorError> for PipelineError {
    fn from(e: crate::evaluator::EvaluatorError) -> Self {
        use crate::evaluator::EvaluatorError as E;
        match e {
            E::DivergedLoss { .. } => PipelineError::Diverged(e.to_string()),
            E::InvalidConfig(_) | E::WindowMismatch { .. } => PipelineError::Config(e.to_string()),
            other => PipelineError::Internal(other.to_string()),
        }
    }
}

impl From<crate::dissim::DissimError> for PipelineError {
    fn from(e: crate::dissim::DissimError) -> Self {
        PipelineError::Internal(e.to_string())
    }
}

impl From<crate::checkpoint::CheckpointError> for PipelineError {
    fn from(e: crate::checkpoint::CheckpointError) -> Self {
        use crate::checkpoint::CheckpointError as E;
        match e {
            E::Io(io) => PipelineError::Io(io.to_string()),
            other => PipelineError::Mismatch(other.to_string()),
        }
    }
}

impl From<crate::metrics::MetricsError> for PipelineError {
    fn from(e: crate::metrics::MetricsError) -> Self {
        PipelineError::Internal(e.to_string())
    }
}
