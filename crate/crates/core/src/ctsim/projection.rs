use serde::{Deserialize, Serialize};

use super::{CtSimError, Phantom};

/// Parallel-beam line integrals, view-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sinogram {
    pub n_views: usize,
    pub n_detectors: usize,
    /// Equiangular over `[0, π)`.
    pub angles: Vec<f64>,
    /// Detector pitch, cm.
    pub detector_spacing: f64,
    /// `∫ μ dl` per ray (dimensionless).
    pub values: Vec<f64>,
    pub geometry_tag: String,
}

pub const PARALLEL_BEAM: &str = "parallel-beam";

impl Sinogram {
    pub fn zeros(n_views: usize, n_detectors: usize, detector_spacing: f64) -> Self {
        Self {
            n_views,
            n_detectors,
            angles: view_angles(n_views),
            detector_spacing,
            values: vec![0.0; n_views * n_detectors],
            geometry_tag: PARALLEL_BEAM.to_string(),
        }
    }

    /// Signed distance of detector `k` from the rotation axis.
    pub fn detector_offset(&self, k: usize) -> f64 {
        detector_offset(k, self.n_detectors, self.detector_spacing)
    }

    pub fn view(&self, v: usize) -> &[f64] {
        &self.values[v * self.n_detectors..(v + 1) * self.n_detectors]
    }

    /// Keeps every `step`-th view, preserving equiangular spacing.
    pub fn subsample_views(&self, step: usize) -> Result<Sinogram, CtSimError> {
        if step == 0 || !self.n_views.is_multiple_of(step) {
            return Err(CtSimError::Config(format!("cannot take every {step}th of {} views", self.n_views)));
        }
        let n_views = self.n_views / step;
        let mut values = Vec::with_capacity(n_views * self.n_detectors);
        for v in (0..self.n_views).step_by(step) {
            values.extend_from_slice(self.view(v));
        }
        Ok(Sinogram {
            n_views,
            n_detectors: self.n_detectors,
            angles: (0..self.n_views).step_by(step).map(|v| self.angles[v]).collect(),
            detector_spacing: self.detector_spacing,
            values,
            geometry_tag: self.geometry_tag.clone(),
        })
    }
}

pub fn view_angles(n_views: usize) -> Vec<f64> {
    (0..n_views).map(|v| std::f64::consts::PI * v as f64 / n_views as f64).collect()
}

pub fn detector_offset(k: usize, n_detectors: usize, spacing: f64) -> f64 {
    (k as f64 - (n_detectors as f64 - 1.0) / 2.0) * spacing
}

/// Detector pitch that places the outermost detectors on the scan circle.
pub fn covering_spacing(field_of_view: f64, n_detectors: usize) -> f64 {
    field_of_view / (n_detectors as f64 - 1.0)
}

/// Exact line integral of `μ` along `x cos θ + y sin θ = s`.
pub fn ray_integral(phantom: &Phantom, theta: f64, s: f64, mu_water: f64) -> f64 {
    let (st, ct) = theta.sin_cos();
    phantom
        .ellipses
        .iter()
        .map(|e| {
            let local_theta = theta - e.rotation;
            let (ls, lc) = local_theta.sin_cos();
            let r2 = (e.semi_a * lc).powi(2) + (e.semi_b * ls).powi(2);
            let offset = s - (e.center_x * ct + e.center_y * st);
            if offset * offset >= r2 {
                0.0
            } else {
                let chord = 2.0 * e.semi_a * e.semi_b * (r2 - offset * offset).sqrt() / r2;
                mu_water * e.delta_hu / 1000.0 * chord
            }
        })
        .sum()
}

/// Analytic parallel-beam projection with detectors spanning the field of view.
pub fn project(phantom: &Phantom, n_views: usize, n_detectors: usize, mu_water: f64) -> Result<Sinogram, CtSimError> {
    project_with_spacing(phantom, n_views, n_detectors, covering_spacing(phantom.field_of_view, n_detectors), mu_water)
}

pub fn project_with_spacing(
    phantom: &Phantom,
    n_views: usize,
    n_detectors: usize,
    detector_spacing: f64,
    mu_water: f64,
) -> Result<Sinogram, CtSimError> {
    if n_views < 1 || n_detectors < 2 {
        return Err(CtSimError::Config(format!("need ≥1 view and ≥2 detectors, got {n_views}/{n_detectors}")));
    }
    if let Some(e) = phantom.ellipses.iter().find(|e| !(e.semi_a > 0.0 && e.semi_b > 0.0)) {
        return Err(CtSimError::DegenerateGeometry(format!("ellipse with semi-axes {} x {}", e.semi_a, e.semi_b)));
    }
    let mut sino = Sinogram::zeros(n_views, n_detectors, detector_spacing);
    for v in 0..n_views {
        let theta = sino.angles[v];
        for k in 0..n_detectors {
            let s = detector_offset(k, n_detectors, detector_spacing);
            sino.values[v * n_detectors + k] = ray_integral(phantom, theta, s, mu_water);
        }
    }
    Ok(sino)
}
