use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CtSimError;
use crate::image::Image;

/// Elliptical region adding `delta_hu` to everything it covers. Lengths in cm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center_x: f64,
    pub center_y: f64,
    pub semi_a: f64,
    pub semi_b: f64,
    pub rotation: f64,
    pub delta_hu: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.rotation.sin_cos();
        let (dx, dy) = (x - self.center_x, y - self.center_y);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.semi_a).powi(2) + (v / self.semi_b).powi(2) <= 1.0
    }

    /// Points on the boundary, used for containment tests.
    fn boundary(&self, n: usize) -> impl Iterator<Item = (f64, f64)> + '_ {
        let (s, c) = self.rotation.sin_cos();
        (0..n).map(move |k| {
            let t = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            let (u, v) = (self.semi_a * t.cos(), self.semi_b * t.sin());
            (self.center_x + u * c - v * s, self.center_y + u * s + v * c)
        })
    }
}

/// Air background (−1000 HU) plus a list of additive ellipses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phantom {
    pub ellipses: Vec<Ellipse>,
    /// Side of the square field of view, cm. The scan circle is inscribed.
    pub field_of_view: f64,
    pub seed: u64,
}

pub const AIR_HU: f64 = -1000.0;
pub const DEFAULT_FOV_CM: f64 = 40.0;

impl Phantom {
    pub fn hu_at(&self, x: f64, y: f64) -> f64 {
        AIR_HU + self.ellipses.iter().filter(|e| e.contains(x, y)).map(|e| e.delta_hu).sum::<f64>()
    }

    /// Attenuation in cm⁻¹ given the water reference.
    pub fn mu_at(&self, x: f64, y: f64, mu_water: f64) -> f64 {
        mu_water * (1.0 + self.hu_at(x, y) / 1000.0)
    }

    /// Total attenuation-weighted area, `Σ μ_k π a_k b_k`.
    pub fn mu_area(&self, mu_water: f64) -> f64 {
        self.ellipses.iter().map(|e| mu_water * e.delta_hu / 1000.0 * std::f64::consts::PI * e.semi_a * e.semi_b).sum()
    }

    /// HU image sampled at pixel centres over the field of view.
    pub fn rasterize(&self, size: usize) -> Image {
        let px = self.field_of_view / size as f64;
        let half = self.field_of_view / 2.0;
        Image::from_fn(size, size, |i, j| {
            let x = (j as f64 + 0.5) * px - half;
            let y = half - (i as f64 + 0.5) * px;
            self.hu_at(x, y) as f32
        })
    }

    pub fn single_ellipse(e: Ellipse, field_of_view: f64) -> Self {
        Self { ellipses: vec![e], field_of_view, seed: 0 }
    }
}

fn inside(outer: &Ellipse, inner: &Ellipse) -> bool {
    inner.boundary(64).all(|(x, y)| outer.contains(x, y))
}

/// Seeded abdomen-like phantom: one water body over air plus `complexity`
/// interior ellipses with deltas in [−150, +250] HU.
pub fn generate_phantom(seed: u64, complexity: usize) -> Result<Phantom, CtSimError> {
    generate_phantom_in(seed, complexity, DEFAULT_FOV_CM)
}

pub fn generate_phantom_in(seed: u64, complexity: usize, field_of_view: f64) -> Result<Phantom, CtSimError> {
    if complexity == 0 {
        return Err(CtSimError::Config("phantom complexity must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = field_of_view / DEFAULT_FOV_CM;
    let body = Ellipse {
        center_x: rng.random_range(-1.0..1.0) * scale,
        center_y: rng.random_range(-1.0..1.0) * scale,
        semi_a: rng.random_range(13.0..16.0) * scale,
        semi_b: rng.random_range(9.0..12.0) * scale,
        rotation: rng.random_range(-0.3..0.3),
        delta_hu: 1000.0,
    };
    let mut ellipses = vec![body.clone()];
    while ellipses.len() < complexity + 1 {
        let a = rng.random_range(0.8..4.0) * scale;
        let b = rng.random_range(0.6..a.max(0.61 * scale));
        let candidate = Ellipse {
            center_x: body.center_x + rng.random_range(-body.semi_a..body.semi_a),
            center_y: body.center_y + rng.random_range(-body.semi_a..body.semi_a),
            semi_a: a,
            semi_b: b,
            rotation: rng.random_range(0.0..std::f64::consts::PI),
            delta_hu: rng.random_range(-150.0..=250.0),
        };
        if inside(&body, &candidate) {
            ellipses.push(candidate);
        }
    }
    Ok(Phantom { ellipses, field_of_view, seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_generation_is_repeatable() {
        assert_eq!(generate_phantom(7, 5).unwrap(), generate_phantom(7, 5).unwrap());
        assert_ne!(generate_phantom(7, 5).unwrap(), generate_phantom(8, 5).unwrap());
        assert_eq!(generate_phantom(7, 5).unwrap().ellipses.len(), 6);
    }

    #[test]
    fn zero_complexity_rejected() {
        assert!(generate_phantom(1, 0).is_err());
    }

    #[test]
    fn ellipses_inside_field_and_body() {
        for seed in 0..20 {
            let p = generate_phantom(seed, 8).unwrap();
            let half = p.field_of_view / 2.0;
            for e in &p.ellipses {
                assert!(e.boundary(64).all(|(x, y)| x.abs() < half && y.abs() < half && x.hypot(y) < half));
                assert!(inside(&p.ellipses[0], e) || std::ptr::eq(e, &p.ellipses[0]));
                assert!(e.delta_hu == 1000.0 || (-150.0..=250.0).contains(&e.delta_hu));
            }
            let img = p.rasterize(64);
            assert!(img.pixels().iter().all(|&v| v >= -1000.0));
        }
    }
}
