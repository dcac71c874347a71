//! Transformer quality evaluator: ViT feature taps, transposed (channel)
//! attention, scale Swin blocks and a patch-weighted score head.

mod blocks;
mod layers;
mod model;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::NumericsError;

pub use blocks::{Backbone, EncoderLayer, PredictionHead, ScaleSwinBlock, SwinLayer, TransposedAttention};
pub use layers::{attention_mask, ParamBuilder};
pub use model::{aggregate_scores, vit_features, Evaluator, FeatureTensor, Prediction};
pub use train::{
    predict_all, train_evaluator, train_evaluator_epochs, write_epoch_csv, EpochRecord, EvalTrainConfig, LabeledInput,
};

#[derive(Debug, Error)]
pub enum EvaluatorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("token grid {grid:?} not divisible by window {window}")]
    WindowMismatch { grid: (usize, usize), window: usize },
    #[error("patch weights sum to {0:e}, below 1e-8")]
    AllZeroWeights(f64),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("empty training set")]
    EmptyDataset,
    #[error("loss diverged in epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Smallest admissible weight sum in normalised aggregation.
pub const WEIGHT_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub in_channels: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub n_heads: usize,
    pub mlp_ratio: usize,
    /// Encoder layers (0-based) whose outputs are concatenated, ascending.
    pub tap_layers: Vec<usize>,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            patch_size: 8,
            in_channels: 3,
            embed_dim: 64,
            depth: 8,
            n_heads: 4,
            mlp_ratio: 4,
            tap_layers: vec![4, 5, 6, 7],
        }
    }
}

impl BackboneConfig {
    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn feature_channels(&self) -> usize {
        self.tap_layers.len() * self.embed_dim
    }

    pub fn validate(&self) -> Result<(), EvaluatorError> {
        let bad = |m: String| Err(EvaluatorError::InvalidConfig(m));
        if self.patch_size == 0 || self.image_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return bad(format!("image_size {} not divisible by patch_size {}", self.image_size, self.patch_size));
        }
        if self.n_heads == 0 || self.embed_dim == 0 || !self.embed_dim.is_multiple_of(self.n_heads) {
            return bad(format!("embed_dim {} not divisible by n_heads {}", self.embed_dim, self.n_heads));
        }
        if self.tap_layers.len() != 4 {
            return bad(format!("exactly 4 tap layers required, got {}", self.tap_layers.len()));
        }
        if self.tap_layers.windows(2).any(|w| w[0] >= w[1]) || self.tap_layers.iter().any(|&l| l >= self.depth) {
            return bad(format!(
                "tap layers {:?} must be strictly increasing and < depth {}",
                self.tap_layers, self.depth
            ));
        }
        if self.in_channels == 0 || self.mlp_ratio == 0 {
            return bad("in_channels and mlp_ratio must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwinConfig {
    pub heads: usize,
    pub window: usize,
    pub mlp_ratio: usize,
}

impl Default for SwinConfig {
    fn default() -> Self {
        Self { heads: 4, window: 4, mlp_ratio: 4 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadMode {
    /// `Σ s_j w_j / Σ w_j`.
    #[default]
    Normalized,
    /// `Σ s_j w_j`.
    Literal,
}

/// Divisor of the channel-attention logits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionScale {
    /// `H·W`.
    #[default]
    Spatial,
    /// `√(H·W)`.
    SqrtSpatial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluatorConfig {
    pub backbone: BackboneConfig,
    /// Channel width of each stage after its 1×1 reduction.
    pub stage_dims: Vec<usize>,
    pub tab_blocks: usize,
    pub swin: SwinConfig,
    pub residual_scale: f64,
    pub head_hidden: usize,
    pub head_mode: HeadMode,
    pub attention_scale: AttentionScale,
}

impl Default for EvaluatorConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            stage_dims: vec![64, 32],
            tab_blocks: 2,
            swin: SwinConfig::default(),
            residual_scale: 0.8,
            head_hidden: 32,
            head_mode: HeadMode::Normalized,
            attention_scale: AttentionScale::Spatial,
        }
    }
}

impl EvaluatorConfig {
    pub fn validate(&self) -> Result<(), EvaluatorError> {
        self.backbone.validate()?;
        let bad = |m: String| Err(EvaluatorError::InvalidConfig(m));
        if self.stage_dims.is_empty() || self.stage_dims.iter().any(|&d| d == 0 || d % self.swin.heads.max(1) != 0) {
            return bad(format!(
                "stage dims {:?} must be positive multiples of swin heads {}",
                self.stage_dims, self.swin.heads
            ));
        }
        if self.swin.heads == 0 || self.swin.window == 0 || self.swin.mlp_ratio == 0 || self.head_hidden == 0 {
            return bad("swin heads/window/mlp_ratio and head_hidden must be positive".into());
        }
        if !(self.residual_scale > 0.0 && self.residual_scale <= 1.0) {
            return bad(format!("residual_scale {} outside (0, 1]", self.residual_scale));
        }
        let g = self.backbone.grid();
        if !g.is_multiple_of(self.swin.window) {
            return Err(EvaluatorError::WindowMismatch { grid: (g, g), window: self.swin.window });
        }
        Ok(())
    }
}
