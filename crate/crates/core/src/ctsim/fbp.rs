use super::{CtSimError, Sinogram};
use crate::image::Image;

/// Discrete Ram-Lak kernel `h[n]` for detector pitch `tau`.
pub fn ram_lak(n: isize, tau: f64) -> f64 {
    if n == 0 {
        1.0 / (4.0 * tau * tau)
    } else if n % 2 == 0 {
        0.0
    } else {
        -1.0 / ((n * n) as f64 * std::f64::consts::PI.powi(2) * tau * tau)
    }
}

/// Ramp-filters one view by direct linear convolution.
pub fn filter_view(view: &[f64], tau: f64) -> Vec<f64> {
    let n = view.len() as isize;
    let kernel: Vec<f64> = (-(n - 1)..n).map(|k| ram_lak(k, tau)).collect();
    (0..n).map(|k| tau * (0..n).map(|m| view[m as usize] * kernel[(k - m + n - 1) as usize]).sum::<f64>()).collect()
}

/// Attenuation image (cm⁻¹) by filtered backprojection.
///
/// Pixel-driven with linear detector interpolation; pixels outside the
/// inscribed scan circle are zero.
pub fn fbp_mu(sino: &Sinogram, out_size: usize, field_of_view: f64) -> Result<Vec<f64>, CtSimError> {
    if out_size < 16 {
        return Err(CtSimError::Config(format!("reconstruction size {out_size} below 16")));
    }
    let radius = field_of_view / 2.0;
    let reach = (sino.n_detectors as f64 - 1.0) / 2.0 * sino.detector_spacing;
    if reach < radius * (1.0 - 1e-9) {
        return Err(CtSimError::InsufficientDetectorCoverage { reach, radius });
    }
    let tau = sino.detector_spacing;
    let filtered: Vec<Vec<f64>> = (0..sino.n_views).map(|v| filter_view(sino.view(v), tau)).collect();
    let trig: Vec<(f64, f64)> = sino.angles.iter().map(|a| a.sin_cos()).collect();
    let px = field_of_view / out_size as f64;
    let centre = (sino.n_detectors as f64 - 1.0) / 2.0;
    let last = sino.n_detectors - 1;
    let scale = std::f64::consts::PI / sino.n_views as f64;
    let mut out = vec![0.0; out_size * out_size];
    for i in 0..out_size {
        let y = radius - (i as f64 + 0.5) * px;
        for j in 0..out_size {
            let x = (j as f64 + 0.5) * px - radius;
            if x * x + y * y > radius * radius {
                continue;
            }
            let mut acc = 0.0;
            for (q, &(st, ct)) in filtered.iter().zip(&trig) {
                let pos = (x * ct + y * st) / tau + centre;
                if pos < 0.0 || pos > last as f64 {
                    continue;
                }
                let k = (pos.floor() as usize).min(last - 1);
                let f = pos - k as f64;
                acc += q[k] * (1.0 - f) + q[k + 1] * f;
            }
            out[i * out_size + j] = acc * scale;
        }
    }
    Ok(out)
}

/// FBP in HU; outside the scan circle is −1000.
pub fn fbp(sino: &Sinogram, out_size: usize, field_of_view: f64, mu_water: f64) -> Result<Image, CtSimError> {
    let mu = fbp_mu(sino, out_size, field_of_view)?;
    let radius = field_of_view / 2.0;
    let px = field_of_view / out_size as f64;
    Ok(Image::from_fn(out_size, out_size, |i, j| {
        let y = radius - (i as f64 + 0.5) * px;
        let x = (j as f64 + 0.5) * px - radius;
        if x * x + y * y > radius * radius {
            -1000.0
        } else {
            (1000.0 * (mu[i * out_size + j] / mu_water - 1.0)) as f32
        }
    }))
}

/// `(clamp(HU, −1000, 350) + 1000) / 1350`.
pub fn normalize_hu(img: &Image) -> Image {
    img.map(|hu| (hu.clamp(-1000.0, 350.0) + 1000.0) / 1350.0)
}
