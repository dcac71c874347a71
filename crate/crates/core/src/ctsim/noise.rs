use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::{CtSimError, Sinogram};

/// Photon-count floor applied before the log.
pub const COUNT_FLOOR: f64 = 0.5;

/// One cell of the dose × view grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoseCondition {
    pub dose_fraction: f64,
    pub n_views: usize,
    /// Full-dose air-scan photons per ray.
    pub b0: f64,
    /// Read-out background counts.
    pub r: f64,
}

impl DoseCondition {
    pub fn photons(&self) -> f64 {
        self.dose_fraction * self.b0
    }

    /// Every (dose, views) pair, dose-major in the given order.
    pub fn grid(doses: &[f64], views: &[usize], b0: f64, r: f64) -> Vec<DoseCondition> {
        doses
            .iter()
            .flat_map(|&dose_fraction| {
                views.iter().map(move |&n_views| DoseCondition { dose_fraction, n_views, b0, r })
            })
            .collect()
    }
}

/// Samples `n ~ Poisson(b e^{-l} + r)` per ray and returns
/// `ln(b / max(n - r, 0.5))`.
pub fn insert_noise(sino: &Sinogram, cond: &DoseCondition, seed: u64) -> Result<Sinogram, CtSimError> {
    let b = cond.photons();
    if !(b > 0.0) || !(cond.dose_fraction > 0.0 && cond.dose_fraction <= 1.0) {
        return Err(CtSimError::NonPositivePhotons(b));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = sino.clone();
    for l in out.values.iter_mut() {
        let mean = b * (-*l).exp() + cond.r;
        let n = if mean > 0.0 {
            Poisson::new(mean).map_err(|e| CtSimError::Config(format!("poisson mean {mean}: {e}")))?.sample(&mut rng)
        } else {
            0.0
        };
        *l = (b / (n - cond.r).max(COUNT_FLOOR)).ln();
    }
    Ok(out)
}

/// Raw photon counts for the same noise model, for moment checks.
pub fn sample_counts(l: f64, cond: &DoseCondition, draws: usize, seed: u64) -> Result<Vec<f64>, CtSimError> {
    let b = cond.photons();
    if !(b > 0.0) {
        return Err(CtSimError::NonPositivePhotons(b));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Poisson::new(b * (-l).exp() + cond.r).map_err(|e| CtSimError::Config(e.to_string()))?;
    Ok((0..draws).map(|_| dist.sample(&mut rng)).collect())
}
