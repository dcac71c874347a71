use serde::{Deserialize, Serialize};

use super::DiffusionError;
use crate::numerics::Real;

/// Noise schedule with every derived table. Steps are 1-based; `ᾱ_0 ≡ 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma2: Vec<f64>,
    loss_weight: Vec<f64>,
}

/// How the per-step noise-prediction error is weighted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossWeighting {
    /// `w_t = 1`.
    #[default]
    Simple,
    /// `(1−α_t)² / (2σ_t² ᾱ_t (1−ᾱ_t))`, read literally at step t; `w_1 = 1`.
    Eq11,
}

/// Which quantity accompanies `x_t` when forming the posterior mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PosteriorForm {
    /// Clean-image parameterisation.
    X0,
    /// Noise parameterisation.
    Eps,
}

pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<DiffusionSchedule, DiffusionError> {
    if steps == 0 || !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(DiffusionError::InvalidRange(format!(
            "need T >= 1 and 0 < beta_start <= beta_end < 1, got T={steps}, {beta_start}..{beta_end}"
        )));
    }
    let beta =
        (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
    DiffusionSchedule::from_betas(beta)
}

impl DiffusionSchedule {
    pub fn from_betas(beta: Vec<f64>) -> Result<Self, DiffusionError> {
        if beta.is_empty() || beta.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(DiffusionError::InvalidRange("every beta must lie in (0, 1)".into()));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(beta.len());
        let mut running = 1.0;
        for &a in &alpha {
            running *= a;
            alpha_bar.push(running);
        }
        let mut sigma2 = Vec::with_capacity(beta.len());
        let mut loss_weight = Vec::with_capacity(beta.len());
        for t in 0..beta.len() {
            let prev = if t == 0 { 1.0 } else { alpha_bar[t - 1] };
            let s2 = (1.0 - prev) * (1.0 - alpha[t]) / (1.0 - alpha_bar[t]);
            sigma2.push(s2);
            loss_weight.push(if t == 0 {
                1.0
            } else {
                (1.0 - alpha[t]).powi(2) / (2.0 * s2 * alpha_bar[t] * (1.0 - alpha_bar[t]))
            });
        }
        Ok(Self { beta, alpha, alpha_bar, sigma2, loss_weight })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn check_step(&self, t: usize) -> Result<(), DiffusionError> {
        if t == 0 || t > self.steps() {
            Err(DiffusionError::StepOutOfRange { t, steps: self.steps() })
        } else {
            Ok(())
        }
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// `ᾱ_t`, with `alpha_bar(0) == 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn sigma2(&self, t: usize) -> f64 {
        self.sigma2[t - 1]
    }

    pub fn loss_weight(&self, t: usize, weighting: LossWeighting) -> f64 {
        match weighting {
            LossWeighting::Simple => 1.0,
            LossWeighting::Eq11 => self.loss_weight[t - 1],
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }
}

fn check_len(a: usize, b: usize) -> Result<(), DiffusionError> {
    if a == b {
        Ok(())
    } else {
        Err(DiffusionError::ShapeMismatch(format!("{a} vs {b} values")))
    }
}

/// `√ᾱ_t·x0 + √(1−ᾱ_t)·ε`.
pub fn q_sample<R: Real>(x0: &[R], t: usize, eps: &[R], sched: &DiffusionSchedule) -> Result<Vec<R>, DiffusionError> {
    sched.check_step(t)?;
    check_len(x0.len(), eps.len())?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (R::of(ab.sqrt()), R::of((1.0 - ab).sqrt()));
    Ok(x0.iter().zip(eps).map(|(&x, &e)| a * x + b * e).collect())
}

/// One step of the forward chain: `√α_t·x_{t−1} + √β_t·ε`.
pub fn forward_step<R: Real>(
    x_prev: &[R],
    t: usize,
    eps: &[R],
    sched: &DiffusionSchedule,
) -> Result<Vec<R>, DiffusionError> {
    sched.check_step(t)?;
    check_len(x_prev.len(), eps.len())?;
    let (a, b) = (R::of(sched.alpha(t).sqrt()), R::of(sched.beta(t).sqrt()));
    Ok(x_prev.iter().zip(eps).map(|(&x, &e)| a * x + b * e).collect())
}

/// Mean of `q(x_{t−1} | x_t, ·)` from either the clean image or the noise.
pub fn posterior_mean<R: Real>(
    x_t: &[R],
    x0_or_eps: &[R],
    t: usize,
    form: PosteriorForm,
    sched: &DiffusionSchedule,
) -> Result<Vec<R>, DiffusionError> {
    sched.check_step(t)?;
    check_len(x_t.len(), x0_or_eps.len())?;
    let (ab, ab_prev, alpha, beta) = (sched.alpha_bar(t), sched.alpha_bar(t - 1), sched.alpha(t), sched.beta(t));
    let (cx, co) = match form {
        PosteriorForm::X0 => (alpha.sqrt() * (1.0 - ab_prev) / (1.0 - ab), ab_prev.sqrt() * beta / (1.0 - ab)),
        PosteriorForm::Eps => (1.0 / alpha.sqrt(), -beta / (alpha.sqrt() * (1.0 - ab).sqrt())),
    };
    let (cx, co) = (R::of(cx), R::of(co));
    Ok(x_t.iter().zip(x0_or_eps).map(|(&x, &o)| cx * x + co * o).collect())
}

/// One reverse step: eps-form posterior mean plus `σ_t·z`.
pub fn reverse_step<R: Real>(
    x_t: &[R],
    eps_hat: &[R],
    t: usize,
    z: Option<&[R]>,
    sched: &DiffusionSchedule,
) -> Result<Vec<R>, DiffusionError> {
    let mut mean = posterior_mean(x_t, eps_hat, t, PosteriorForm::Eps, sched)?;
    if let Some(z) = z {
        check_len(mean.len(), z.len())?;
        let s = R::of(sched.sigma2(t).sqrt());
        mean.iter_mut().zip(z).for_each(|(m, &v)| *m += s * v);
    }
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_step_table() {
        let s = make_schedule(4, 0.1, 0.4).unwrap();
        let expected = [0.9, 0.72, 0.504, 0.3024];
        for (t, e) in expected.iter().enumerate() {
            assert!((s.alpha_bar(t + 1) - e).abs() < 1e-12);
        }
        assert_eq!(s.sigma2(1), 0.0);
        for t in 1..=4 {
            assert_eq!(s.alpha_bar(t), s.alpha_bar(t - 1) * s.alpha(t));
        }
    }

    #[test]
    fn invalid_ranges() {
        assert!(make_schedule(0, 0.1, 0.2).is_err());
        assert!(make_schedule(10, 0.2, 0.1).is_err());
        assert!(make_schedule(10, 0.0, 0.1).is_err());
        assert!(make_schedule(10, 0.1, 1.0).is_err());
        assert!(make_schedule(1, 0.5, 0.5).is_ok());
    }

    #[test]
    fn step_bounds() {
        let s = make_schedule(3, 0.1, 0.2).unwrap();
        let x = [0.5f64];
        assert!(matches!(q_sample(&x, 0, &x, &s), Err(DiffusionError::StepOutOfRange { t: 0, steps: 3 })));
        assert!(q_sample(&x, 4, &x, &s).is_err());
        assert!(posterior_mean(&x, &x, 4, PosteriorForm::X0, &s).is_err());
    }
}
