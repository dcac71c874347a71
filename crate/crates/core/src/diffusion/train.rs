use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::models::constant_image;
use super::{
    reverse_step, BaselineRegressor, DiffusionError, DiffusionSchedule, LossWeighting, NoisePredictor, TinyUnet,
};
use crate::image::Image;
use crate::numerics::{batch_gradients, Adam, Bound, NumericsError, Real, Tape, Var};
use crate::seed::derive;

/// A clean target and the degraded image it is conditioned on.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub target: Image,
    pub condition: Image,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub iters: usize,
    pub batch: usize,
    pub seed: u64,
    pub weight_decay: f64,
    pub weighting: LossWeighting,
    /// Run batch items on the rayon pool. Results do not depend on this.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            iters: 1000,
            batch: 8,
            seed: 0,
            weight_decay: 0.0,
            weighting: LossWeighting::Simple,
            parallel: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), DiffusionError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.batch == 0 || self.weight_decay < 0.0 {
            return Err(DiffusionError::InvalidSpec("lr > 0, batch > 0 and weight_decay >= 0 required".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iter: usize,
    pub loss: f64,
}

pub fn write_loss_csv(path: &std::path::Path, trace: &[LossRecord]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in trace {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    crate::fsutil::atomic_write(path, &bytes)?;
    Ok(())
}

fn to_real<R: Real>(img: &Image) -> Vec<R> {
    img.pixels().iter().map(|&v| R::of(v as f64)).collect()
}

fn normal_vec<R: Real>(rng: &mut impl Rng, n: usize) -> Vec<R> {
    (0..n).map(|_| R::of(rng.sample::<f64, _>(StandardNormal))).collect()
}

/// Weighted noise-prediction error for one sample, recorded on `tape`.
#[allow(clippy::too_many_arguments)]
pub fn ddpm_loss<R: Real>(
    tape: &mut Tape<R>,
    p: &Bound,
    model: &TinyUnet<R>,
    x0: &[R],
    y: &[R],
    shape: (usize, usize),
    t: usize,
    eps: &[R],
    sched: &DiffusionSchedule,
    weighting: LossWeighting,
) -> Result<Var, DiffusionError> {
    if x0.len() != y.len() || x0.len() != eps.len() {
        return Err(DiffusionError::ShapeMismatch(format!("x0 {}, y {}, eps {}", x0.len(), y.len(), eps.len())));
    }
    let x_t = super::q_sample(x0, t, eps, sched)?;
    let xv = constant_image(tape, &x_t, shape)?;
    let yv = constant_image(tape, y, shape)?;
    let ev = constant_image(tape, eps, shape)?;
    let pred = model.forward(tape, p, xv, yv, t)?;
    let err = tape.mse(pred, ev)?;
    let w = sched.loss_weight(t, weighting);
    Ok(if w == 1.0 { err } else { tape.scale(err, w)? })
}

/// Same loss evaluated for any predictor, without gradients.
#[allow(clippy::too_many_arguments)]
pub fn ddpm_loss_value<R: Real, P: NoisePredictor<R>>(
    model: &P,
    x0: &[R],
    y: &[R],
    shape: (usize, usize),
    t: usize,
    eps: &[R],
    sched: &DiffusionSchedule,
    weighting: LossWeighting,
) -> Result<f64, DiffusionError> {
    if x0.len() != y.len() || x0.len() != eps.len() {
        return Err(DiffusionError::ShapeMismatch(format!("x0 {}, y {}, eps {}", x0.len(), y.len(), eps.len())));
    }
    let x_t = super::q_sample(x0, t, eps, sched)?;
    let pred = model.predict_noise(&x_t, y, shape, t, sched)?;
    let mse = pred.iter().zip(eps).map(|(&a, &b)| (a - b).as_f64().powi(2)).sum::<f64>() / eps.len() as f64;
    Ok(sched.loss_weight(t, weighting) * mse)
}

fn check_dataset(data: &[ImagePair]) -> Result<(usize, usize), DiffusionError> {
    let first = data.first().ok_or(DiffusionError::EmptyDataset)?;
    let shape = first.target.shape();
    for pair in data {
        if pair.target.shape() != shape || pair.condition.shape() != shape {
            return Err(DiffusionError::ShapeMismatch("dataset images differ in shape".into()));
        }
    }
    Ok(shape)
}

fn diverged(iter: usize) -> impl Fn(NumericsError) -> DiffusionError {
    move |e| match e {
        NumericsError::NonFinite { .. } => DiffusionError::DivergedLoss { iter },
        other => DiffusionError::Numerics(other),
    }
}

struct DdpmItem<R> {
    x0: Vec<R>,
    y: Vec<R>,
    t: usize,
    eps: Vec<R>,
}

/// Iterations `start_iter .. start_iter + cfg.iters`. Each iteration draws its
/// minibatch, steps and noise from a stream keyed by `(seed, iter)`, so a run
/// split into chunks reproduces an uninterrupted one.
pub fn train_ddpm(
    model: &mut TinyUnet<f32>,
    data: &[ImagePair],
    sched: &DiffusionSchedule,
    cfg: &TrainConfig,
    start_iter: usize,
) -> Result<Vec<LossRecord>, DiffusionError> {
    cfg.validate()?;
    let shape = check_dataset(data)?;
    model.check_shape(shape)?;
    let adam = Adam::with_weight_decay(cfg.weight_decay);
    // Forward passes read parameters from the tape; this copy only supplies the layout.
    let arch = model.clone();
    let mut trace = Vec::with_capacity(cfg.iters);
    for iter in start_iter..start_iter + cfg.iters {
        let mut rng = ChaCha8Rng::seed_from_u64(derive(cfg.seed, iter as u64));
        let items: Vec<DdpmItem<f32>> = (0..cfg.batch)
            .map(|_| {
                let pair = &data[rng.random_range(0..data.len())];
                let t = rng.random_range(1..=sched.steps());
                let eps = normal_vec(&mut rng, shape.0 * shape.1);
                DdpmItem { x0: to_real(&pair.target), y: to_real(&pair.condition), t, eps }
            })
            .collect();
        let loss = batch_gradients(model.params_mut(), &items, cfg.parallel, |tape, p, it| {
            ddpm_loss(tape, p, &arch, &it.x0, &it.y, shape, it.t, &it.eps, sched, cfg.weighting).map_err(|e| match e {
                DiffusionError::Numerics(n) => n,
                other => NumericsError::InvalidArgument(other.to_string()),
            })
        })
        .map_err(diverged(iter))?;
        if !loss.is_finite() {
            return Err(DiffusionError::DivergedLoss { iter });
        }
        adam.step(model.params_mut(), cfg.lr);
        trace.push(LossRecord { iter, loss });
    }
    Ok(trace)
}

/// Reverse chain from `x_start` at step `t_start` down to `x_0`, unclamped.
/// `noise_seed = None` sets every `z` to zero.
pub fn reverse_chain<R: Real, P: NoisePredictor<R>>(
    model: &P,
    x_start: Vec<R>,
    y: &[R],
    shape: (usize, usize),
    t_start: usize,
    sched: &DiffusionSchedule,
    noise_seed: Option<u64>,
) -> Result<Vec<R>, DiffusionError> {
    sched.check_step(t_start)?;
    let mut rng = noise_seed.map(ChaCha8Rng::seed_from_u64);
    let mut x = x_start;
    for t in (1..=t_start).rev() {
        let eps = model.predict_noise(&x, y, shape, t, sched)?;
        let z = match (&mut rng, t > 1) {
            (Some(r), true) => Some(normal_vec::<R>(r, x.len())),
            _ => None,
        };
        x = reverse_step(&x, &eps, t, z.as_deref(), sched)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DiffusionError::NonFinite { t });
        }
    }
    Ok(x)
}

/// Ancestral sampling from `x_T ~ N(0, I)`; the result is clamped to `[0, 1]`.
pub fn sample_primary<R: Real, P: NoisePredictor<R>>(
    model: &P,
    y: &[R],
    shape: (usize, usize),
    sched: &DiffusionSchedule,
    rng_seed: u64,
) -> Result<Vec<R>, DiffusionError> {
    if y.len() != shape.0 * shape.1 {
        return Err(DiffusionError::ShapeMismatch(format!("{} values for {}x{}", y.len(), shape.0, shape.1)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let x_t = normal_vec(&mut rng, y.len());
    let x0 = reverse_chain(model, x_t, y, shape, sched.steps(), sched, Some(derive(rng_seed, 1)))?;
    Ok(x0.into_iter().map(|v| v.max(R::zero()).min(R::one())).collect())
}

pub fn sample_primary_image<P: NoisePredictor<f32>>(
    model: &P,
    y: &Image,
    sched: &DiffusionSchedule,
    rng_seed: u64,
) -> Result<Image, DiffusionError> {
    let out = sample_primary(model, y.pixels(), y.shape(), sched, rng_seed)?;
    Ok(Image::new(y.height(), y.width(), out).expect("shape preserved"))
}

/// Plain MSE regression from condition to target.
pub fn train_baseline(
    model: &mut BaselineRegressor<f32>,
    data: &[ImagePair],
    cfg: &TrainConfig,
    start_iter: usize,
) -> Result<Vec<LossRecord>, DiffusionError> {
    cfg.validate()?;
    let shape = check_dataset(data)?;
    let adam = Adam::with_weight_decay(cfg.weight_decay);
    let arch = model.clone();
    let mut trace = Vec::with_capacity(cfg.iters);
    for iter in start_iter..start_iter + cfg.iters {
        let mut rng = ChaCha8Rng::seed_from_u64(derive(cfg.seed, iter as u64));
        let items: Vec<&ImagePair> = (0..cfg.batch).map(|_| &data[rng.random_range(0..data.len())]).collect();
        let loss = batch_gradients(model.params_mut(), &items, cfg.parallel, |tape, p, pair| {
            let y = constant_image(tape, pair.condition.pixels(), shape)
                .map_err(|e| NumericsError::InvalidArgument(e.to_string()))?;
            let x = constant_image(tape, pair.target.pixels(), shape)
                .map_err(|e| NumericsError::InvalidArgument(e.to_string()))?;
            let pred = arch.forward(tape, p, y)?;
            tape.mse(pred, x)
        })
        .map_err(diverged(iter))?;
        if !loss.is_finite() {
            return Err(DiffusionError::DivergedLoss { iter });
        }
        adam.step(model.params_mut(), cfg.lr);
        trace.push(LossRecord { iter, loss });
    }
    Ok(trace)
}
