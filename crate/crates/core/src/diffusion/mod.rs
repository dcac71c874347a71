//! Conditional denoising diffusion: schedule tables, forward noising,
//! posterior means, the noise-prediction loss, ancestral sampling, and a
//! one-shot regression baseline.

mod models;
mod schedule;
mod train;

use thiserror::Error;

use crate::numerics::NumericsError;

pub use models::{
    timestep_embedding, BaselineRegressor, DenoiserKind, DenoiserSpec, NoisePredictor, OracleDenoiser, TinyUnet,
};
pub use schedule::{
    forward_step, make_schedule, posterior_mean, q_sample, reverse_step, DiffusionSchedule, LossWeighting,
    PosteriorForm,
};
pub use train::{
    ddpm_loss, ddpm_loss_value, reverse_chain, sample_primary, sample_primary_image, train_baseline, train_ddpm,
    write_loss_csv, ImagePair, LossRecord, TrainConfig,
};

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid schedule: {0}")]
    InvalidRange(String),
    #[error("step {t} outside 1..={steps}")]
    StepOutOfRange { t: usize, steps: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty training set")]
    EmptyDataset,
    #[error("loss diverged at iteration {iter}")]
    DivergedLoss { iter: usize },
    #[error("non-finite state while sampling at step {t}")]
    NonFinite { t: usize },
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}
