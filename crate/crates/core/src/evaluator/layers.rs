use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::numerics::{Bound, NumericsError, ParamId, ParamStore, Real, Tape, Tensor, Var};

/// Registers named parameters with a seeded initialiser.
pub struct ParamBuilder<'a, R> {
    store: &'a mut ParamStore<R>,
    rng: ChaCha8Rng,
}

impl<'a, R: Real> ParamBuilder<'a, R> {
    pub fn new(store: &'a mut ParamStore<R>, seed: u64) -> Self {
        Self { store, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> ParamId {
        self.store.add_uniform(name, shape, bound, &mut self.rng)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.store.add_zeros(name, shape)
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> ParamId {
        self.store.add_filled(name, shape, 1.0)
    }

    pub fn linear(&mut self, name: &str, out_f: usize, in_f: usize, bias: bool) -> Linear {
        let bound = 1.0 / (in_f as f64).sqrt();
        Linear {
            w: self.uniform(&format!("{name}.weight"), &[out_f, in_f], bound),
            b: bias.then(|| self.uniform(&format!("{name}.bias"), &[out_f], bound)),
        }
    }

    pub fn zero_linear(&mut self, name: &str, out_f: usize, in_f: usize) -> Linear {
        Linear {
            w: self.zeros(&format!("{name}.weight"), &[out_f, in_f]),
            b: Some(self.zeros(&format!("{name}.bias"), &[out_f])),
        }
    }

    pub fn norm(&mut self, name: &str, dim: usize) -> Norm {
        Norm { gamma: self.ones(&format!("{name}.gamma"), &[dim]), beta: self.zeros(&format!("{name}.beta"), &[dim]) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn apply<R: Real>(&self, tape: &mut Tape<R>, p: &Bound, x: Var) -> Result<Var, NumericsError> {
        tape.linear(x, p[self.w], self.b.map(|b| p[b]))
    }
}

/// Per-row layer norm with a per-feature affine.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn apply<R: Real>(&self, tape: &mut Tape<R>, p: &Bound, x: Var) -> Result<Var, NumericsError> {
        let n = tape.layer_norm(x, 1e-6)?;
        let n = tape.mul_broadcast(n, p[self.gamma], 1)?;
        tape.add_broadcast(n, p[self.beta], 1)
    }
}

/// Multi-head scaled dot-product attention over the rows of `qkv` (L × 3C),
/// laid out as `[q | k | v]`; `mask` is added to every head's logits.
pub fn multi_head_attention<R: Real>(
    tape: &mut Tape<R>,
    qkv: Var,
    heads: usize,
    mask: Option<Var>,
) -> Result<Var, NumericsError> {
    let c = tape.shape(qkv)[1] / 3;
    let d = c / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let q = tape.slice(qkv, 1, h * d, (h + 1) * d)?;
        let k = tape.slice(qkv, 1, c + h * d, c + (h + 1) * d)?;
        let v = tape.slice(qkv, 1, 2 * c + h * d, 2 * c + (h + 1) * d)?;
        let kt = tape.transpose(k)?;
        let logits = tape.matmul(q, kt)?;
        let mut logits = tape.scale(logits, scale)?;
        if let Some(m) = mask {
            logits = tape.add(logits, m)?;
        }
        let a = tape.softmax(logits)?;
        outs.push(tape.matmul(a, v)?);
    }
    if outs.len() == 1 {
        Ok(outs[0])
    } else {
        tape.concat(&outs, 1)
    }
}

/// Additive mask for the windows of a cyclically shifted grid: `-100` between
/// tokens that came from different regions, `0` otherwise. `None` when no
/// window needs masking.
pub fn attention_mask<R: Real>(grid: (usize, usize), window: usize, shift: usize) -> Option<Vec<Tensor<R>>> {
    if shift == 0 {
        return None;
    }
    let (h, w) = grid;
    let region = |pos: usize, n: usize| -> usize {
        if pos < n - window {
            0
        } else if pos < n - shift {
            1
        } else {
            2
        }
    };
    let area = window * window;
    let mut masks = Vec::new();
    for wh in 0..h / window {
        for ww in 0..w / window {
            let labels: Vec<usize> = (0..area)
                .map(|r| {
                    let (i, j) = (wh * window + r / window, ww * window + r % window);
                    region(i, h) * 3 + region(j, w)
                })
                .collect();
            let data = (0..area * area)
                .map(|k| if labels[k / area] == labels[k % area] { R::zero() } else { R::of(-100.0) })
                .collect();
            masks.push(Tensor::new(vec![area, area], data).expect("square mask"));
        }
    }
    Some(masks)
}
