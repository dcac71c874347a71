use super::{ParamStore, Real};

/// Adam with decoupled weight decay.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

impl Adam {
    pub fn with_weight_decay(weight_decay: f64) -> Self {
        Self { weight_decay, ..Self::default() }
    }

    /// One update of every parameter from its accumulated gradient.
    pub fn step<R: Real>(&self, store: &mut ParamStore<R>, lr: f64) {
        for p in store.iter_mut() {
            p.adam.step += 1;
            let t = p.adam.step as i32;
            let c1 = 1.0 - self.beta1.powi(t);
            let c2 = 1.0 - self.beta2.powi(t);
            let (b1, b2) = (R::of(self.beta1), R::of(self.beta2));
            let grads = p.grad.data();
            let m = p.adam.m.data_mut();
            for (mi, &g) in m.iter_mut().zip(grads) {
                *mi = b1 * *mi + (R::one() - b1) * g;
            }
            let v = p.adam.v.data_mut();
            for (vi, &g) in v.iter_mut().zip(grads) {
                *vi = b2 * *vi + (R::one() - b2) * g * g;
            }
            let m = p.adam.m.data();
            let v = p.adam.v.data();
            for ((w, &mi), &vi) in p.value.data_mut().iter_mut().zip(m).zip(v) {
                let mhat = mi.as_f64() / c1;
                let vhat = vi.as_f64() / c2;
                let update = mhat / (vhat.sqrt() + self.eps) + self.weight_decay * w.as_f64();
                *w = R::of(w.as_f64() - lr * update);
            }
        }
    }
}

/// Cosine annealing from `lr_max` at step 0 to `lr_min` at `total`.
pub fn cosine_lr(step: usize, total: usize, lr_max: f64, lr_min: f64) -> f64 {
    if total == 0 {
        return lr_min;
    }
    let frac = (step.min(total) as f64) / total as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}
