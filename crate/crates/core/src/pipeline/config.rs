use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::ctsim::SimConfig;
use crate::diffusion::{make_schedule, DenoiserKind, DenoiserSpec, DiffusionSchedule, TrainConfig};
use crate::dissim::AssemblyMode;
use crate::evaluator::{EvalTrainConfig, EvaluatorConfig};
use crate::seed::derive;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Run directory; every stage writes a subdirectory here.
    pub root: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { root: PathBuf::from("runs/default") }
    }
}

/// Phantom-level train/test split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { train_fraction: 0.9, test_fraction: 0.1, seed: 7 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Test => "test",
        }
    }
}

/// Working resolution shared by the denoiser and the evaluator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepConfig {
    pub work_size: usize,
    pub crop_fraction: f64,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self { work_size: 32, crop_fraction: 0.875 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdpmSection {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub denoiser: DenoiserSpec,
    pub train: TrainConfig,
    pub init_seed: u64,
    pub sample_seed: u64,
    /// Iterations between resumable checkpoints.
    pub checkpoint_every: usize,
}

impl Default for DdpmSection {
    fn default() -> Self {
        Self {
            steps: 200,
            beta_start: 1e-4,
            beta_end: 0.02,
            denoiser: DenoiserSpec::default(),
            train: TrainConfig { iters: 20_000, seed: 11, ..TrainConfig::default() },
            init_seed: 13,
            sample_seed: 17,
            checkpoint_every: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluatorSection {
    pub model: EvaluatorConfig,
    pub train: EvalTrainConfig,
    pub init_seed: u64,
    pub ablation: AssemblyMode,
    /// Epochs between resumable checkpoints.
    pub checkpoint_every: usize,
}

impl Default for EvaluatorSection {
    fn default() -> Self {
        Self {
            model: EvaluatorConfig::default(),
            train: EvalTrainConfig { seed: 19, ..EvalTrainConfig::default() },
            init_seed: 23,
            ablation: AssemblyMode::DBiqa,
            checkpoint_every: 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub paths: PathsConfig,
    pub sim: SimConfig,
    pub split: SplitConfig,
    pub prep: PrepConfig,
    pub ddpm: DdpmSection,
    pub evaluator: EvaluatorSection,
}

impl ExperimentConfig {
    /// Reads TOML, or JSON when the extension is `.json` or the text is a JSON object.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e == "json") || text.trim_start().starts_with('{');
        let cfg: Self = if is_json {
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    /// Replaces every stage seed with an independent stream of `seed`.
    pub fn reseed(&mut self, seed: u64) {
        self.sim.seed = derive(seed, 0);
        self.split.seed = derive(seed, 1);
        self.ddpm.init_seed = derive(seed, 2);
        self.ddpm.train.seed = derive(seed, 3);
        self.ddpm.sample_seed = derive(seed, 4);
        self.evaluator.init_seed = derive(seed, 5);
        self.evaluator.train.seed = derive(seed, 6);
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        self.sim.validate()?;
        let (tr, te) = (self.split.train_fraction, self.split.test_fraction);
        if !(tr >= 0.0 && te > 0.0) || (tr + te - 1.0).abs() > 1e-9 {
            return bad(format!("split fractions {tr} + {te} must be non-negative and sum to 1"));
        }
        if self.test_phantoms() == 0 {
            return bad(format!("test split is empty for {} phantoms", self.sim.n_phantoms));
        }
        if self.prep.work_size == 0 || !(self.prep.crop_fraction > 0.0 && self.prep.crop_fraction <= 1.0) {
            return bad("work_size > 0 and crop_fraction in (0, 1] required".into());
        }
        self.schedule()?;
        if self.ddpm.denoiser.kind != DenoiserKind::TinyUnet {
            return bad("the pipeline trains a tiny-unet denoiser".into());
        }
        self.ddpm.denoiser.validate()?;
        self.ddpm.train.validate()?;
        let levels = 1usize << (self.ddpm.denoiser.depth - 1);
        if !self.prep.work_size.is_multiple_of(levels) {
            return bad(format!("work_size {} not divisible by {levels}", self.prep.work_size));
        }
        if self.ddpm.checkpoint_every == 0 || self.evaluator.checkpoint_every == 0 {
            return bad("checkpoint_every must be positive".into());
        }
        self.evaluator.model.validate()?;
        self.evaluator.train.validate()?;
        let bb = &self.evaluator.model.backbone;
        if bb.image_size != self.prep.work_size || bb.in_channels != 3 {
            return bad(format!(
                "evaluator expects {}×{} with {} channels; pipeline produces 3 channels at {}",
                bb.image_size, bb.image_size, bb.in_channels, self.prep.work_size
            ));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule, PipelineError> {
        Ok(make_schedule(self.ddpm.steps, self.ddpm.beta_start, self.ddpm.beta_end)?)
    }

    fn test_phantoms(&self) -> usize {
        (self.split.test_fraction * self.sim.n_phantoms as f64).round() as usize
    }

    /// Split tag for every phantom index.
    pub fn phantom_split(&self) -> Vec<SplitTag> {
        let n = self.sim.n_phantoms;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(self.split.seed));
        let n_test = self.test_phantoms().min(n);
        let mut tags = vec![SplitTag::Train; n];
        for &p in &order[..n_test] {
            tags[p] = SplitTag::Test;
        }
        tags
    }

    /// Copy with execution-only knobs reset, so they never enter a hash.
    pub(crate) fn normalized(&self) -> Self {
        let mut c = self.clone();
        c.paths = PathsConfig::default();
        c.ddpm.train.parallel = true;
        c.ddpm.checkpoint_every = 1;
        c.evaluator.train.parallel = true;
        c.evaluator.checkpoint_every = 1;
        c.evaluator.ablation = AssemblyMode::default();
        c
    }
}
