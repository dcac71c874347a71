//! Single-plane images and the CTIQ1 raster file format.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("not a CTIQ1 file: {0}")]
    BadFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A 2-D grid of values, row-major. Either HU or normalised `[0, 1]`,
/// depending on where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self, ImageError> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(ImageError::ShapeMismatch(format!("{height}x{width} with {} pixels", pixels.len())));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn filled(height: usize, width: usize, v: f32) -> Self {
        Self { height, width, pixels: vec![v; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut pixels = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                pixels.push(f(i, j));
            }
        }
        Self { height, width, pixels }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f32 {
        self.pixels[i * self.width + j]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image {
        Image { height: self.height, width: self.width, pixels: self.pixels.iter().map(|&v| f(v)).collect() }
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&v| v as f64).sum::<f64>() / self.pixels.len() as f64
    }

    pub fn same_shape(&self, other: &Image) -> Result<(), ImageError> {
        if self.shape() == other.shape() {
            Ok(())
        } else {
            Err(ImageError::ShapeMismatch(format!("{:?} vs {:?}", self.shape(), other.shape())))
        }
    }

    /// Central square-ish crop keeping `fraction` of each side (rounded).
    pub fn crop_center(&self, fraction: f64) -> Image {
        let ch = ((self.height as f64 * fraction).round() as usize).clamp(1, self.height);
        let cw = ((self.width as f64 * fraction).round() as usize).clamp(1, self.width);
        let (oi, oj) = ((self.height - ch) / 2, (self.width - cw) / 2);
        Image::from_fn(ch, cw, |i, j| self.at(oi + i, oj + j))
    }

    /// Bilinear resampling with half-pixel centres.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Image {
        if (height, width) == self.shape() {
            return self.clone();
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let coord = |dst: usize, scale: f64, n: usize| -> (usize, usize, f64) {
            let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            (lo, hi, src - lo as f64)
        };
        Image::from_fn(height, width, |i, j| {
            let (y0, y1, fy) = coord(i, sy, self.height);
            let (x0, x1, fx) = coord(j, sx, self.width);
            let top = self.at(y0, x0) as f64 * (1.0 - fx) + self.at(y0, x1) as f64 * fx;
            let bottom = self.at(y1, x0) as f64 * (1.0 - fx) + self.at(y1, x1) as f64 * fx;
            (top * (1.0 - fy) + bottom * fy) as f32
        })
    }
}

const MAGIC: &[u8; 6] = b"CTIQ1\0";

/// Encodes planes as CTIQ1: magic, u32 LE height/width/channels, then
/// little-endian f32 values, row-major and channel-minor.
pub fn encode_ctiq(planes: &[&Image]) -> Result<Vec<u8>, ImageError> {
    let first = planes.first().ok_or_else(|| ImageError::ShapeMismatch("no planes".into()))?;
    for p in planes {
        first.same_shape(p)?;
    }
    let (h, w, c) = (first.height, first.width, planes.len());
    let mut out = Vec::with_capacity(MAGIC.len() + 12 + 4 * h * w * c);
    out.extend_from_slice(MAGIC);
    for v in [h, w, c] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for idx in 0..h * w {
        for p in planes {
            out.extend_from_slice(&p.pixels[idx].to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_ctiq(bytes: &[u8]) -> Result<Vec<Image>, ImageError> {
    if bytes.len() < MAGIC.len() + 12 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(ImageError::BadFormat("missing CTIQ1 magic".into()));
    }
    let field = |k: usize| {
        let at = MAGIC.len() + 4 * k;
        u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize
    };
    let (h, w, c) = (field(0), field(1), field(2));
    let body = &bytes[MAGIC.len() + 12..];
    if h == 0 || w == 0 || c == 0 || body.len() != 4 * h * w * c {
        return Err(ImageError::BadFormat(format!("{h}x{w}x{c} header with {} payload bytes", body.len())));
    }
    let mut planes = vec![Vec::with_capacity(h * w); c];
    for (k, chunk) in body.chunks_exact(4).enumerate() {
        planes[k % c].push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    planes.into_iter().map(|p| Image::new(h, w, p)).collect()
}

pub fn write_ctiq(path: &Path, planes: &[&Image]) -> Result<(), ImageError> {
    let bytes = encode_ctiq(planes)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_ctiq(path: &Path) -> Result<Vec<Image>, ImageError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_ctiq(&bytes)
}
