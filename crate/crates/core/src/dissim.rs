//! Local SSIM maps, dissimilarity maps and the evaluator's three-plane input.
//!
//! SSIM uses an 11×11 Gaussian window (σ = 1.5), `C1 = (0.01 L)²`,
//! `C2 = (0.03 L)²` with `L = 1`, and half-sample symmetric reflection at the
//! borders so every pixel gets a value. Local SSIM can be negative; stored
//! maps are clamped to `[0, 1]`.
//!
//! SSIM follows the usual convention: 1 means identical neighbourhoods.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::Image;

#[derive(Debug, Error, PartialEq)]
pub enum DissimError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("pixel value {0} outside [0, 1]")]
    RangeError(f32),
    #[error("crop fraction {0} outside (0, 1]")]
    BadCropFraction(f64),
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

const RANGE_TOLERANCE: f32 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct SsimMap {
    pub values: Image,
    pub window: usize,
    pub sigma: f64,
    pub c1: f64,
    pub c2: f64,
}

impl SsimMap {
    pub fn mean(&self) -> f64 {
        self.values.mean()
    }
}

/// Normalised 1-D Gaussian taps.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let taps: Vec<f64> = (0..size).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Half-sample symmetric reflection of an index into `[0, n)`.
#[inline]
pub fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

fn blur(src: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let r = (taps.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for i in 0..h {
        let row = &src[i * w..(i + 1) * w];
        for j in 0..w {
            tmp[i * w + j] =
                taps.iter().enumerate().map(|(k, &t)| t * row[reflect(j as isize + k as isize - r, w)]).sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            out[i * w + j] =
                taps.iter().enumerate().map(|(k, &t)| t * tmp[reflect(i as isize + k as isize - r, h) * w + j]).sum();
        }
    }
    out
}

fn check_range(img: &Image) -> Result<(), DissimError> {
    match img.pixels().iter().find(|&&v| !(-RANGE_TOLERANCE..=1.0 + RANGE_TOLERANCE).contains(&v)) {
        Some(&v) => Err(DissimError::RangeError(v)),
        None => Ok(()),
    }
}

fn check_shapes(a: &Image, b: &Image) -> Result<(), DissimError> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(DissimError::ShapeMismatch(a.shape(), b.shape()))
    }
}

/// Per-pixel local SSIM, unclamped, in 64-bit.
pub fn ssim_values_raw(a: &Image, b: &Image) -> Result<Vec<f64>, DissimError> {
    check_shapes(a, b)?;
    check_range(a)?;
    check_range(b)?;
    let (h, w) = a.shape();
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let x: Vec<f64> = a.pixels().iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = b.pixels().iter().map(|&v| v as f64).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let (mx, my) = (blur(&x, h, w, &taps), blur(&y, h, w, &taps));
    let (exx, eyy, exy) = (blur(&xx, h, w, &taps), blur(&yy, h, w, &taps), blur(&xy, h, w, &taps));
    Ok((0..h * w)
        .map(|k| {
            let (ma, mb) = (mx[k], my[k]);
            let va = exx[k] - ma * ma;
            let vb = eyy[k] - mb * mb;
            let cov = exy[k] - ma * mb;
            ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2))
        })
        .collect())
}

pub fn ssim_map(a: &Image, b: &Image) -> Result<SsimMap, DissimError> {
    let raw = ssim_values_raw(a, b)?;
    let (h, w) = a.shape();
    let values = Image::new(h, w, raw.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect()).expect("shape checked");
    Ok(SsimMap { values, window: SSIM_WINDOW, sigma: SSIM_SIGMA, c1: SSIM_C1, c2: SSIM_C2 })
}

/// Global mean of the clamped SSIM map.
pub fn mean_ssim(a: &Image, b: &Image) -> Result<f64, DissimError> {
    Ok(ssim_map(a, b)?.mean())
}

/// `(1 - SSIM(distorted, primary)) ∘ distorted`.
pub fn dissimilarity_map(distorted: &Image, primary: &Image) -> Result<Image, DissimError> {
    let ssim = ssim_map(distorted, primary)?;
    let pixels =
        ssim.values.pixels().iter().zip(distorted.pixels()).map(|(&s, &d)| ((1.0 - s) * d).clamp(0.0, 1.0)).collect();
    Ok(Image::new(distorted.height(), distorted.width(), pixels).expect("shape checked"))
}

/// Which planes feed the evaluator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssemblyMode {
    /// Dissimilarity map plus two copies of the distorted image.
    #[default]
    DBiqa,
    /// Three copies of the distorted image; no primary content involved.
    #[serde(alias = "maniqa")]
    ManiqaAblation,
}

/// Three equally sized planes; plane order is part of the contract.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiChannelInput {
    pub channels: [Image; 3],
}

impl MultiChannelInput {
    pub fn size(&self) -> (usize, usize) {
        self.channels[0].shape()
    }

    /// Channel-major values, `3 × H × W`.
    pub fn to_chw(&self) -> Vec<f32> {
        self.channels.iter().flat_map(|c| c.pixels().iter().copied()).collect()
    }
}

fn crop_resize(img: &Image, crop_fraction: f64, out_size: usize) -> Image {
    img.crop_center(crop_fraction).resize_bilinear(out_size, out_size)
}

/// Center-crops both planes, resamples to `out_size`, and stacks
/// `[dmap, distorted, distorted]`. `dmap_channel` moves the map to another slot.
pub fn assemble_input_with(
    distorted: &Image,
    dmap: Option<&Image>,
    crop_fraction: f64,
    out_size: usize,
    dmap_channel: usize,
) -> Result<MultiChannelInput, DissimError> {
    if !(crop_fraction > 0.0 && crop_fraction <= 1.0) {
        return Err(DissimError::BadCropFraction(crop_fraction));
    }
    let d = crop_resize(distorted, crop_fraction, out_size);
    let mut channels = [d.clone(), d.clone(), d];
    if let Some(m) = dmap {
        check_shapes(distorted, m)?;
        channels[dmap_channel.min(2)] = crop_resize(m, crop_fraction, out_size);
    }
    Ok(MultiChannelInput { channels })
}

pub fn assemble_input(
    distorted: &Image,
    dmap: &Image,
    crop_fraction: f64,
    out_size: usize,
) -> Result<MultiChannelInput, DissimError> {
    assemble_input_with(distorted, Some(dmap), crop_fraction, out_size, 0)
}

/// Input for the evaluator-only configuration: `[distorted] × 3`.
pub fn assemble_ablation_input(
    distorted: &Image,
    crop_fraction: f64,
    out_size: usize,
) -> Result<MultiChannelInput, DissimError> {
    assemble_input_with(distorted, None, crop_fraction, out_size, 0)
}
