use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DiffusionError, DiffusionSchedule};
use crate::numerics::{Bound, NumericsError, ParamId, ParamStore, Real, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenoiserKind {
    #[default]
    TinyUnet,
    /// Test double that knows the clean image.
    Oracle,
    BaselineRegressor,
}

/// Architecture description; together with a seed it fixes every parameter shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserSpec {
    pub kind: DenoiserKind,
    /// `x_t` plus the condition for the U-Net; just the condition for the regressor.
    pub channels_in: usize,
    pub base_width: usize,
    /// Resolution levels (U-Net) or hidden conv layers (regressor).
    pub depth: usize,
    pub time_embed_dim: usize,
}

impl Default for DenoiserSpec {
    fn default() -> Self {
        Self { kind: DenoiserKind::TinyUnet, channels_in: 2, base_width: 32, depth: 2, time_embed_dim: 32 }
    }
}

impl DenoiserSpec {
    pub fn tiny_unet(base_width: usize, depth: usize) -> Self {
        Self { base_width, depth, ..Self::default() }
    }

    pub fn baseline(base_width: usize, depth: usize) -> Self {
        Self { kind: DenoiserKind::BaselineRegressor, channels_in: 1, base_width, depth, time_embed_dim: 0 }
    }

    pub fn validate(&self) -> Result<(), DiffusionError> {
        let bad = |m: &str| Err(DiffusionError::InvalidSpec(m.into()));
        if self.base_width == 0 || self.depth == 0 {
            return bad("base_width and depth must be positive");
        }
        match self.kind {
            DenoiserKind::TinyUnet if self.channels_in != 2 => bad("tiny-unet takes x_t and y: channels_in = 2"),
            DenoiserKind::TinyUnet if self.time_embed_dim < 2 || !self.time_embed_dim.is_multiple_of(2) => {
                bad("time_embed_dim must be even and at least 2")
            }
            DenoiserKind::BaselineRegressor if self.channels_in != 1 => {
                bad("baseline regressor takes y only: channels_in = 1")
            }
            DenoiserKind::Oracle => bad("oracle denoisers have no parameters"),
            _ => Ok(()),
        }
    }
}

/// Anything that predicts the noise in `x_t` given the condition `y`.
pub trait NoisePredictor<R: Real>: Sync {
    fn predict_noise(
        &self,
        x_t: &[R],
        y: &[R],
        shape: (usize, usize),
        t: usize,
        sched: &DiffusionSchedule,
    ) -> Result<Vec<R>, DiffusionError>;
}

/// Recovers the exact noise from `x_t` using the known clean image, plus an optional constant offset.
#[derive(Clone, Debug)]
pub struct OracleDenoiser<R> {
    pub x0: Vec<R>,
    pub offset: f64,
}

impl<R: Real> OracleDenoiser<R> {
    pub fn new(x0: Vec<R>) -> Self {
        Self { x0, offset: 0.0 }
    }
}

impl<R: Real> NoisePredictor<R> for OracleDenoiser<R> {
    fn predict_noise(
        &self,
        x_t: &[R],
        _y: &[R],
        _shape: (usize, usize),
        t: usize,
        sched: &DiffusionSchedule,
    ) -> Result<Vec<R>, DiffusionError> {
        sched.check_step(t)?;
        if x_t.len() != self.x0.len() {
            return Err(DiffusionError::ShapeMismatch(format!("{} vs {} values", x_t.len(), self.x0.len())));
        }
        let ab = sched.alpha_bar(t);
        let (a, inv) = (R::of(ab.sqrt()), R::of(1.0 / (1.0 - ab).sqrt()));
        let off = R::of(self.offset);
        Ok(x_t.iter().zip(&self.x0).map(|(&x, &x0)| (x - a * x0) * inv + off).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Conv {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
struct EncoderLevel {
    down: Option<Conv>,
    conv_a: Conv,
    norm_a: Norm,
    time: Conv,
    conv_b: Conv,
    norm_b: Norm,
}

#[derive(Clone, Debug, PartialEq)]
struct DecoderLevel {
    up: Conv,
    conv: Conv,
    norm: Norm,
}

#[derive(Clone, Debug, PartialEq)]
struct UnetLayout {
    time_in: Conv,
    encoder: Vec<EncoderLevel>,
    decoder: Vec<DecoderLevel>,
    out: Conv,
}

struct Builder<'a, R> {
    store: &'a mut ParamStore<R>,
    rng: ChaCha8Rng,
}

impl<R: Real> Builder<'_, R> {
    fn conv(&mut self, name: &str, out_c: usize, in_c: usize, k: usize) -> Conv {
        let bound = 1.0 / ((in_c * k * k) as f64).sqrt();
        Conv {
            w: self.store.add_uniform(format!("{name}.weight"), &[out_c, in_c, k, k], bound, &mut self.rng),
            b: self.store.add_uniform(format!("{name}.bias"), &[out_c], bound, &mut self.rng),
        }
    }

    fn linear(&mut self, name: &str, out_f: usize, in_f: usize) -> Conv {
        let bound = 1.0 / (in_f as f64).sqrt();
        Conv {
            w: self.store.add_uniform(format!("{name}.weight"), &[out_f, in_f], bound, &mut self.rng),
            b: self.store.add_uniform(format!("{name}.bias"), &[out_f], bound, &mut self.rng),
        }
    }

    fn norm(&mut self, name: &str, c: usize) -> Norm {
        Norm {
            gamma: self.store.add_filled(format!("{name}.gamma"), &[c], 1.0),
            beta: self.store.add_zeros(format!("{name}.beta"), &[c]),
        }
    }
}

fn conv<R: Real>(tape: &mut Tape<R>, p: &Bound, c: Conv, x: Var, stride: usize) -> Result<Var, NumericsError> {
    let k = tape.shape(p[c.w])[2];
    tape.conv2d(x, p[c.w], Some(p[c.b]), stride, k / 2)
}

/// Layer norm over the whole `(C, H, W)` map with a per-channel affine.
fn norm<R: Real>(tape: &mut Tape<R>, p: &Bound, n: Norm, x: Var) -> Result<Var, NumericsError> {
    let shape = tape.shape(x).to_vec();
    let flat = tape.reshape(x, &[1, shape.iter().product()])?;
    let normed = tape.layer_norm(flat, 1e-5)?;
    let back = tape.reshape(normed, &shape)?;
    let scaled = tape.mul_broadcast(back, p[n.gamma], 0)?;
    tape.add_broadcast(scaled, p[n.beta], 0)
}

/// Sinusoidal embedding of the step index.
pub fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let freq = (-(10000f64.ln()) * k as f64 / half as f64).exp();
        out[k] = (t as f64 * freq).sin();
        out[half + k] = (t as f64 * freq).cos();
    }
    out
}

fn image_leaf<R: Real>(tape: &mut Tape<R>, values: &[R], shape: (usize, usize)) -> Result<Var, DiffusionError> {
    let t = Tensor::new(vec![1, shape.0, shape.1], values.to_vec())
        .map_err(|_| DiffusionError::ShapeMismatch(format!("{} values for {}x{}", values.len(), shape.0, shape.1)))?;
    Ok(tape.constant(t))
}

/// Conditional noise predictor: `[x_t, y]` in, predicted noise out.
#[derive(Clone, Debug, PartialEq)]
pub struct TinyUnet<R> {
    spec: DenoiserSpec,
    params: ParamStore<R>,
    layout: UnetLayout,
}

impl<R: Real> TinyUnet<R> {
    pub fn new(spec: DenoiserSpec, seed: u64) -> Result<Self, DiffusionError> {
        spec.validate()?;
        if spec.kind != DenoiserKind::TinyUnet {
            return Err(DiffusionError::InvalidSpec(format!("{:?} is not a U-Net", spec.kind)));
        }
        let mut params = ParamStore::new();
        let mut b = Builder { store: &mut params, rng: ChaCha8Rng::seed_from_u64(seed) };
        let e = spec.time_embed_dim;
        let width = |l: usize| spec.base_width << l;
        let time_in = b.linear("time.in", e, e);
        let encoder = (0..spec.depth)
            .map(|l| {
                let down = (l > 0).then(|| b.conv(&format!("enc{l}.down"), width(l), width(l - 1), 3));
                let in_c = if l == 0 { spec.channels_in } else { width(l) };
                EncoderLevel {
                    down,
                    conv_a: b.conv(&format!("enc{l}.conv_a"), width(l), in_c, 3),
                    norm_a: b.norm(&format!("enc{l}.norm_a"), width(l)),
                    time: b.linear(&format!("enc{l}.time"), width(l), e),
                    conv_b: b.conv(&format!("enc{l}.conv_b"), width(l), width(l), 3),
                    norm_b: b.norm(&format!("enc{l}.norm_b"), width(l)),
                }
            })
            .collect();
        let decoder = (0..spec.depth - 1)
            .map(|l| DecoderLevel {
                up: b.conv(&format!("dec{l}.up"), width(l), width(l + 1), 3),
                conv: b.conv(&format!("dec{l}.conv"), width(l), 2 * width(l), 3),
                norm: b.norm(&format!("dec{l}.norm"), width(l)),
            })
            .collect();
        let out = b.conv("out", 1, width(0), 1);
        Ok(Self { spec, params, layout: UnetLayout { time_in, encoder, decoder, out } })
    }

    pub fn spec(&self) -> &DenoiserSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore<R> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<R> {
        &mut self.params
    }

    pub fn cast<S: Real>(&self) -> TinyUnet<S> {
        TinyUnet { spec: self.spec.clone(), params: self.params.cast(), layout: self.layout.clone() }
    }

    /// Spatial sides must be divisible by `2^(depth-1)`.
    pub fn check_shape(&self, shape: (usize, usize)) -> Result<(), DiffusionError> {
        let m = 1 << (self.spec.depth - 1);
        if shape.0 == 0 || shape.1 == 0 || !shape.0.is_multiple_of(m) || !shape.1.is_multiple_of(m) {
            return Err(DiffusionError::ShapeMismatch(format!("{}x{} not divisible by {m}", shape.0, shape.1)));
        }
        Ok(())
    }

    /// `x_t` and `y` are `(1, H, W)` variables; returns `(1, H, W)`.
    pub fn forward(&self, tape: &mut Tape<R>, p: &Bound, x_t: Var, y: Var, t: usize) -> Result<Var, NumericsError> {
        let l = &self.layout;
        let emb = Tensor::from_f64(&[1, self.spec.time_embed_dim], &timestep_embedding(t, self.spec.time_embed_dim))?;
        let emb = tape.constant(emb);
        let temb = tape.linear(emb, p[l.time_in.w], Some(p[l.time_in.b]))?;
        let temb = tape.relu(temb)?;

        let mut h = tape.concat(&[x_t, y], 0)?;
        let mut skips = Vec::with_capacity(l.encoder.len());
        for level in &l.encoder {
            if let Some(down) = level.down {
                h = conv(tape, p, down, h, 2)?;
            }
            h = conv(tape, p, level.conv_a, h, 1)?;
            h = norm(tape, p, level.norm_a, h)?;
            h = tape.relu(h)?;
            let shift = tape.linear(temb, p[level.time.w], Some(p[level.time.b]))?;
            let c = tape.shape(shift)[1];
            let shift = tape.reshape(shift, &[c])?;
            h = tape.add_broadcast(h, shift, 0)?;
            h = conv(tape, p, level.conv_b, h, 1)?;
            h = norm(tape, p, level.norm_b, h)?;
            h = tape.relu(h)?;
            skips.push(h);
        }
        for (i, level) in l.decoder.iter().enumerate().rev() {
            h = tape.upsample2(h)?;
            h = conv(tape, p, level.up, h, 1)?;
            h = tape.concat(&[h, skips[i]], 0)?;
            h = conv(tape, p, level.conv, h, 1)?;
            h = norm(tape, p, level.norm, h)?;
            h = tape.relu(h)?;
        }
        conv(tape, p, l.out, h, 1)
    }
}

impl<R: Real> NoisePredictor<R> for TinyUnet<R> {
    fn predict_noise(
        &self,
        x_t: &[R],
        y: &[R],
        shape: (usize, usize),
        t: usize,
        sched: &DiffusionSchedule,
    ) -> Result<Vec<R>, DiffusionError> {
        sched.check_step(t)?;
        self.check_shape(shape)?;
        let mut tape = Tape::inference();
        let p = self.params.bind(&mut tape);
        let xv = image_leaf(&mut tape, x_t, shape)?;
        let yv = image_leaf(&mut tape, y, shape)?;
        let out = self.forward(&mut tape, &p, xv, yv, t)?;
        Ok(tape.value(out).data().to_vec())
    }
}

/// One-shot regression denoiser: `ŷ = y + f(y)` with a plain conv stack.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineRegressor<R> {
    spec: DenoiserSpec,
    params: ParamStore<R>,
    layers: Vec<Conv>,
}

impl<R: Real> BaselineRegressor<R> {
    pub fn new(spec: DenoiserSpec, seed: u64) -> Result<Self, DiffusionError> {
        spec.validate()?;
        if spec.kind != DenoiserKind::BaselineRegressor {
            return Err(DiffusionError::InvalidSpec(format!("{:?} is not a baseline regressor", spec.kind)));
        }
        let mut params = ParamStore::new();
        let mut b = Builder { store: &mut params, rng: ChaCha8Rng::seed_from_u64(seed) };
        let w = spec.base_width;
        let mut layers = vec![b.conv("conv0", w, spec.channels_in, 3)];
        for i in 1..spec.depth {
            layers.push(b.conv(&format!("conv{i}"), w, w, 3));
        }
        layers.push(b.conv("out", 1, w, 3));
        Ok(Self { spec, params, layers })
    }

    pub fn spec(&self) -> &DenoiserSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore<R> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<R> {
        &mut self.params
    }

    pub fn forward(&self, tape: &mut Tape<R>, p: &Bound, y: Var) -> Result<Var, NumericsError> {
        let mut h = y;
        for (i, &c) in self.layers.iter().enumerate() {
            h = conv(tape, p, c, h, 1)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h)?;
            }
        }
        tape.add(y, h)
    }

    pub fn predict(&self, y: &[R], shape: (usize, usize)) -> Result<Vec<R>, DiffusionError> {
        let mut tape = Tape::inference();
        let p = self.params.bind(&mut tape);
        let yv = image_leaf(&mut tape, y, shape)?;
        let out = self.forward(&mut tape, &p, yv)?;
        Ok(tape.value(out).data().to_vec())
    }
}

pub(crate) fn constant_image<R: Real>(
    tape: &mut Tape<R>,
    values: &[R],
    shape: (usize, usize),
) -> Result<Var, DiffusionError> {
    image_leaf(tape, values, shape)
}
