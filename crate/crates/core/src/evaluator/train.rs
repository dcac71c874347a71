use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Evaluator, EvaluatorError};
use crate::metrics::{plcc, srocc, ScorePairs};
use crate::numerics::{batch_gradients, cosine_lr, Adam, NumericsError, Tensor};
use crate::seed::derive;

/// One evaluator input (channel-major `3 × S × S`) and its target score.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledInput {
    pub chw: Vec<f32>,
    pub label: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalTrainConfig {
    pub lr: f64,
    pub lr_min: f64,
    pub epochs: usize,
    pub batch: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub parallel: bool,
}

impl Default for EvalTrainConfig {
    fn default() -> Self {
        Self { lr: 1e-5, lr_min: 0.0, epochs: 30, batch: 8, weight_decay: 1e-5, seed: 0, parallel: true }
    }
}

impl EvalTrainConfig {
    pub fn validate(&self) -> Result<(), EvaluatorError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(0.0..=self.lr).contains(&self.lr_min) {
            return Err(EvaluatorError::InvalidConfig("need lr > 0 and 0 <= lr_min <= lr".into()));
        }
        if self.batch == 0 || self.weight_decay < 0.0 {
            return Err(EvaluatorError::InvalidConfig("batch > 0 and weight_decay >= 0 required".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub lr: f64,
    pub val_plcc: Option<f64>,
    pub val_srocc: Option<f64>,
}

pub fn write_epoch_csv(path: &std::path::Path, trace: &[EpochRecord]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in trace {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    crate::fsutil::atomic_write(path, &bytes)?;
    Ok(())
}

/// Scores in input order. Parallel evaluation does not change the values.
pub fn predict_all(model: &Evaluator<f32>, inputs: &[&[f32]], parallel: bool) -> Result<Vec<f64>, EvaluatorError> {
    let run = |chw: &&[f32]| model.predict_chw(chw).map(|p| p.score);
    if parallel {
        inputs.par_iter().map(run).collect()
    } else {
        inputs.iter().map(run).collect()
    }
}

fn to_numerics(e: EvaluatorError) -> NumericsError {
    match e {
        EvaluatorError::Numerics(n) => n,
        other => NumericsError::InvalidArgument(other.to_string()),
    }
}

/// Trains epochs `start_epoch .. cfg.epochs` with MSE on the scores, AdamW and
/// a cosine learning rate over all `cfg.epochs`. Shuffling per epoch is keyed
/// by `(seed, epoch)`, so resuming at an epoch boundary reproduces a full run.
pub fn train_evaluator(
    model: &mut Evaluator<f32>,
    train: &[LabeledInput],
    val: &[LabeledInput],
    cfg: &EvalTrainConfig,
    start_epoch: usize,
) -> Result<Vec<EpochRecord>, EvaluatorError> {
    train_evaluator_epochs(model, train, val, cfg, start_epoch..cfg.epochs)
}

/// Runs only the given epochs of the schedule defined by `cfg`, so a run can be split
/// across invocations with identical results.
pub fn train_evaluator_epochs(
    model: &mut Evaluator<f32>,
    train: &[LabeledInput],
    val: &[LabeledInput],
    cfg: &EvalTrainConfig,
    epochs: std::ops::Range<usize>,
) -> Result<Vec<EpochRecord>, EvaluatorError> {
    cfg.validate()?;
    if epochs.end > cfg.epochs {
        return Err(EvaluatorError::InvalidConfig(format!("epoch {} beyond schedule of {}", epochs.end, cfg.epochs)));
    }
    if train.is_empty() {
        return Err(EvaluatorError::EmptyDataset);
    }
    let adam = Adam::with_weight_decay(cfg.weight_decay);
    let arch = model.clone();
    let steps_per_epoch = train.len().div_ceil(cfg.batch);
    let total_steps = cfg.epochs * steps_per_epoch;
    let mut trace = Vec::new();
    for epoch in epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive(cfg.seed, epoch as u64)));
        let (mut loss_sum, mut lr) = (0.0, cfg.lr);
        for (b, chunk) in order.chunks(cfg.batch).enumerate() {
            let items: Vec<&LabeledInput> = chunk.iter().map(|&i| &train[i]).collect();
            let loss = batch_gradients(model.params_mut(), &items, cfg.parallel, |tape, p, item| {
                let x = arch.image_var(tape, &item.chw).map_err(to_numerics)?;
                let out = arch.forward(tape, p, x).map_err(to_numerics)?;
                let target = tape.constant(Tensor::scalar(item.label as f32));
                tape.mse(out.score, target)
            })
            .map_err(|e| match e {
                NumericsError::NonFinite { .. } => EvaluatorError::DivergedLoss { epoch },
                other => EvaluatorError::Numerics(other),
            })?;
            if !loss.is_finite() {
                return Err(EvaluatorError::DivergedLoss { epoch });
            }
            lr = cosine_lr(epoch * steps_per_epoch + b, total_steps, cfg.lr, cfg.lr_min);
            adam.step(model.params_mut(), lr);
            loss_sum += loss * items.len() as f64;
        }
        let (val_plcc, val_srocc) = if val.is_empty() {
            (None, None)
        } else {
            let inputs: Vec<&[f32]> = val.iter().map(|v| v.chw.as_slice()).collect();
            let preds = predict_all(model, &inputs, cfg.parallel)?;
            let labels: Vec<f64> = val.iter().map(|v| v.label).collect();
            match ScorePairs::new(&labels, &preds) {
                Ok(pairs) => (plcc(&pairs).ok(), srocc(&pairs).ok()),
                Err(_) => (None, None),
            }
        };
        let record = EpochRecord { epoch, train_loss: loss_sum / train.len() as f64, lr, val_plcc, val_srocc };
        log::info!(
            "epoch {epoch}: loss {:.5} val plcc {:?} srocc {:?}",
            record.train_loss,
            record.val_plcc,
            record.val_srocc
        );
        trace.push(record);
    }
    Ok(trace)
}
