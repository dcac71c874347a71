use super::layers::{attention_mask, multi_head_attention, Linear, Norm, ParamBuilder};
use super::{AttentionScale, BackboneConfig, EvaluatorError, HeadMode, SwinConfig, WEIGHT_EPS};
use crate::numerics::{Bound, NumericsError, ParamId, Real, Tape, Tensor, Var};

/// Pre-norm transformer encoder layer on tokens `(L, C)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer {
    heads: usize,
    norm1: Norm,
    qkv: Linear,
    proj: Linear,
    norm2: Norm,
    fc1: Linear,
    fc2: Linear,
}

impl EncoderLayer {
    pub fn new<R: Real>(b: &mut ParamBuilder<R>, name: &str, dim: usize, heads: usize, mlp_ratio: usize) -> Self {
        Self {
            heads,
            norm1: b.norm(&format!("{name}.norm1"), dim),
            qkv: b.linear(&format!("{name}.qkv"), 3 * dim, dim, false),
            proj: b.linear(&format!("{name}.proj"), dim, dim, true),
            norm2: b.norm(&format!("{name}.norm2"), dim),
            fc1: b.linear(&format!("{name}.fc1"), mlp_ratio * dim, dim, true),
            fc2: b.linear(&format!("{name}.fc2"), dim, mlp_ratio * dim, true),
        }
    }

    pub fn forward<R: Real>(&self, tape: &mut Tape<R>, p: &Bound, x: Var) -> Result<Var, NumericsError> {
        let h = self.norm1.apply(tape, p, x)?;
        let qkv = self.qkv.apply(tape, p, h)?;
        let a = multi_head_attention(tape, qkv, self.heads, None)?;
        let a = self.proj.apply(tape, p, a)?;
        let x = tape.add(x, a)?;
        mlp(tape, p, x, self.norm2, self.fc1, self.fc2)
    }
}

fn mlp<R: Real>(
    tape: &mut Tape<R>,
    p: &Bound,
    x: Var,
    norm: Norm,
    fc1: Linear,
    fc2: Linear,
) -> Result<Var, NumericsError> {
    let h = norm.apply(tape, p, x)?;
    let h = fc1.apply(tape, p, h)?;
    let h = tape.gelu(h)?;
    let h = fc2.apply(tape, p, h)?;
    tape.add(x, h)
}

/// Patch embedding, learned positions and the encoder stack.
#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    cfg: BackboneConfig,
    patch_w: ParamId,
    patch_b: ParamId,
    pos: ParamId,
    layers: Vec<EncoderLayer>,
}

impl Backbone {
    pub fn new<R: Real>(b: &mut ParamBuilder<R>, cfg: &BackboneConfig) -> Result<Self, EvaluatorError> {
        cfg.validate()?;
        let (e, ps, c) = (cfg.embed_dim, cfg.patch_size, cfg.in_channels);
        let bound = 1.0 / ((c * ps * ps) as f64).sqrt();
        let tokens = cfg.grid() * cfg.grid();
        Ok(Self {
            cfg: cfg.clone(),
            patch_w: b.uniform("backbone.patch.weight", &[e, c, ps, ps], bound),
            patch_b: b.uniform("backbone.patch.bias", &[e], bound),
            pos: b.uniform("backbone.pos", &[tokens, e], 0.02),
            layers: (0..cfg.depth)
                .map(|i| EncoderLayer::new(b, &format!("backbone.layer{i}"), e, cfg.n_heads, cfg.mlp_ratio))
                .collect(),
        })
    }

    /// `(C, H, W)` image to tapped features `(4·E, N)`, taps in ascending order.
    pub fn forward<R: Real>(&self, tape: &mut Tape<R>, p: &Bound, image: Var) -> Result<Var, NumericsError> {
        let e = self.cfg.embed_dim;
        let n = self.cfg.grid() * self.cfg.grid();
        let x = tape.conv2d(image, p[self.patch_w], Some(p[self.patch_b]), self.cfg.patch_size, 0)?;
        let x = tape.reshape(x, &[e, n])?;
        let x = tape.transpose(x)?;
        let mut x = tape.add(x, p[self.pos])?;
        let mut taps = Vec::with_capacity(self.cfg.tap_layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, p, x)?;
            if self.cfg.tap_layers.contains(&i) {
                taps.push(tape.transpose(x)?);
            }
        }
        tape.concat(&taps, 0)
    }
}

/// Attention across channels of `X (C, N)`: `X + W_p(A·V̂) + b_p` with
/// `A = softmax_rows(K̂ Q̂ᵀ / α)`; projections act on the spatial axis.
#[derive(Clone, Debug, PartialEq)]
pub struct TransposedAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    scale: AttentionScale,
}

impl TransposedAttention {
    /// `W_p` and `b_p` start at zero, so a fresh block is the identity.
    pub fn new<R: Real>(b: &mut ParamBuilder<R>, name: &str, tokens: usize, scale: AttentionScale) -> Self {
        Self {
            q: b.linear(&format!("{name}.q"), tokens, tokens, false),
            k: b.linear(&format!("{name}.k"), tokens, tokens, false),
            v: b.linear(&format!("{name}.v"), tokens, tokens, true),
            out: b.zero_linear(&format!("{name}.proj"), tokens, tokens),
            scale,
        }
    }

    pub fn alpha(&self, tokens: usize) -> f64 {
        match self.scale {
            AttentionScale::Spatial => tokens as f64,
            AttentionScale::SqrtSpatial => (tokens as f64).sqrt(),
        }
    }

    /// The `C × C` attention matrix.
    pub fn attention<R: Real>(&self, tape: &mut Tape<R>, p: &Bound, x: Var) -> Result<Var, NumericsError> {
        let n = tape.shape(x)[1];
        let q = self.q.apply(tape, p, x)?;
        let k = self.k.apply(tape, p, x)?;
        let qt = tape.transpose(q)?;
        let logits = tape.matmul(k, qt)?;
        let logits = tape.scale(logits, 1.0 / self.alpha(n))?;
        tape.softmax(logits)
    }

    pub fn forward<R: Real>(&self, tape: &mut Tape<R>, p: &Bound, x: Var) -> Result<Var, NumericsError> {
        let a = self.attention(tape, p, x)?;
        let v = self.v.apply(tape, p, x)?;
        let mixed = tape.matmul(a, v)?;
        let projected = self.out.apply(tape, p, mixed)?;
        tape.add(projected, x)
    }
}

/// Window attention + MLP on a token grid `(H·W, C)`, optionally shifted.
#[derive(Clone, Debug, PartialEq)]
pub struct SwinLayer {
    grid: (usize, usize),
    window: usize,
    shift: usize,
    heads: usize,
    norm1: Norm,
    qkv: Linear,
    proj: Linear,
    norm2: Norm,
    fc1: Linear,
    fc2: Linear,
}

impl SwinLayer {
    pub fn new<R: Real>(
        b: &mut ParamBuilder<R>,
        name: &str,
        dim: usize,
        grid: (usize, usize),
        cfg: &SwinConfig,
        shift: usize,
    ) -> Result<Self, EvaluatorError> {
        if cfg.window == 0 || !grid.0.is_multiple_of(cfg.window) || !grid.1.is_multiple_of(cfg.window) {
            return Err(EvaluatorError::WindowMismatch { grid, window: cfg.window });
        }
        Ok(Self {
            grid,
            window: cfg.window,
            shift,
            heads: cfg.heads,
            norm1: b.norm(&format!("{name}.norm1"), dim),
            qkv: b.linear(&format!("{name}.qkv"), 3 * dim, dim, false),
            proj: b.linear(&format!("{name}.proj"), dim, dim, true),
            norm2: b.norm(&format!("{name}.norm2"), dim),
            fc1: b.linear(&format!("{name}.fc1"), cfg.mlp_ratio * dim, dim, true),
            fc2: b.linear(&format!("{name}.fc2"), dim, cfg.mlp_ratio * dim, true),
        })
    }

    pub fn forward<R: Real>(&self, tape: &mut Tape<R>, p: &Bound, x: Var) -> Result<Var, NumericsError> {
        let h = self.norm1.apply(tape, p, x)?;
        let h = tape.window_partition(h, self.grid, self.window, self.shift)?;
        let qkv = self.qkv.apply(tape, p, h)?;
        let area = self.window * self.window;
        let n_windows = tape.shape(qkv)[0] / area;
        let masks = attention_mask::<R>(self.grid, self.window, self.shift);
        let mut outs = Vec::with_capacity(n_windows);
        for wi in 0..n_windows {
            let rows = tape.slice(qkv, 0, wi * area, (wi + 1) * area)?;
            let mask = match &masks {
                Some(m) if m[wi].data().iter().any(|&v| v != R::zero()) => Some(tape.constant(m[wi].clone())),
                _ => None,
            };
            outs.push(multi_head_attention(tape, rows, self.heads, mask)?);
        }
        let a = if outs.len() == 1 { outs[0] } else { tape.concat(&outs, 0)? };
        let a = self.proj.apply(tape, p, a)?;
        let a = tape.window_merge(a, self.grid, self.window, self.shift)?;
        let x = tape.add(x, a)?;
        mlp(tape, p, x, self.norm2, self.fc1, self.fc2)
    }
}

/// Two Swin layers (plain, then shifted by half a window), a 3×3 conv, and
/// `F_out = α·conv + F_0`. The conv starts at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleSwinBlock {
    grid: (usize, usize),
    layers: [SwinLayer; 2],
    conv_w: ParamId,
    conv_b: ParamId,
    alpha: f64,
}

impl ScaleSwinBlock {
    pub fn new<R: Real>(
        b: &mut ParamBuilder<R>,
        name: &str,
        dim: usize,
        grid: (usize, usize),
        cfg: &SwinConfig,
        alpha: f64,
    ) -> Result<Self, EvaluatorError> {
        Ok(Self {
            grid,
            layers: [
                SwinLayer::new(b, &format!("{name}.stl0"), dim, grid, cfg, 0)?,
                SwinLayer::new(b, &format!("{name}.stl1"), dim, grid, cfg, cfg.window / 2)?,
            ],
            conv_w: b.zeros(&format!("{name}.conv.weight"), &[dim, dim, 3, 3]),
            conv_b: b.zeros(&format!("{name}.conv.bias"), &[dim]),
            alpha,
        })
    }

    /// Channel-major `(C, N)` in and out.
    pub fn forward<R: Real>(&self, tape: &mut Tape<R>, p: &Bound, f0: Var) -> Result<Var, NumericsError> {
        let c = tape.shape(f0)[0];
        let mut x = tape.transpose(f0)?;
        for layer in &self.layers {
            x = layer.forward(tape, p, x)?;
        }
        let x = tape.transpose(x)?;
        let x = tape.reshape(x, &[c, self.grid.0, self.grid.1])?;
        let x = tape.conv2d(x, p[self.conv_w], Some(p[self.conv_b]), 1, 1)?;
        let x = tape.reshape(x, &[c, self.grid.0 * self.grid.1])?;
        let x = tape.scale(x, self.alpha)?;
        tape.add(x, f0)
    }
}

/// Per-patch score and sigmoid weight branches.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionHead {
    score: [Linear; 2],
    weight: [Linear; 2],
    mode: HeadMode,
}

/// Head outputs: the image score (shape `[1]`) and per-patch `(N, 1)` columns.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub score: Var,
    pub patch_scores: Var,
    pub patch_weights: Var,
}

impl PredictionHead {
    pub fn new<R: Real>(b: &mut ParamBuilder<R>, name: &str, dim: usize, hidden: usize, mode: HeadMode) -> Self {
        Self {
            score: [
                b.linear(&format!("{name}.score1"), hidden, dim, true),
                b.linear(&format!("{name}.score2"), 1, hidden, true),
            ],
            weight: [
                b.linear(&format!("{name}.weight1"), hidden, dim, true),
                b.linear(&format!("{name}.weight2"), 1, hidden, true),
            ],
            mode,
        }
    }

    /// Channel-major features `(C, N)`.
    pub fn forward<R: Real>(&self, tape: &mut Tape<R>, p: &Bound, f: Var) -> Result<HeadVars, EvaluatorError> {
        let tokens = tape.transpose(f)?;
        let branch = |tape: &mut Tape<R>, layers: &[Linear; 2]| -> Result<Var, NumericsError> {
            let h = layers[0].apply(tape, p, tokens)?;
            let h = tape.relu(h)?;
            layers[1].apply(tape, p, h)
        };
        let s = branch(tape, &self.score)?;
        let w = branch(tape, &self.weight)?;
        let w = tape.sigmoid(w)?;
        let sw = tape.mul(s, w)?;
        let total = tape.sum(sw)?;
        let score = match self.mode {
            HeadMode::Literal => total,
            HeadMode::Normalized => {
                let wsum = tape.sum(w)?;
                let wsum_value = tape.value(wsum).item().as_f64();
                if wsum_value < WEIGHT_EPS {
                    return Err(EvaluatorError::AllZeroWeights(wsum_value));
                }
                tape.div(total, wsum)?
            }
        };
        Ok(HeadVars { score, patch_scores: s, patch_weights: w })
    }
}

pub(crate) fn image_constant<R: Real>(
    tape: &mut Tape<R>,
    chw: &[f32],
    c: usize,
    size: usize,
) -> Result<Var, EvaluatorError> {
    if chw.len() != c * size * size {
        return Err(EvaluatorError::ShapeMismatch(format!("{} values, expected {c}x{size}x{size}", chw.len())));
    }
    let t = Tensor::new(vec![c, size, size], chw.iter().map(|&v| R::of(v as f64)).collect())?;
    Ok(tape.constant(t))
}
