use ctiqa_core::ctsim::*;
use ctiqa_core::image::{read_ctiq, Image};
use std::sync::Arc;

fn disc(radius: f64, delta_hu: f64) -> Ellipse {
    Ellipse { center_x: 0.0, center_y: 0.0, semi_a: radius, semi_b: radius, rotation: 0.0, delta_hu }
}

#[test]
fn disc_projection_matches_chord_length() {
    let r = 7.5;
    // mu_water = 1 and +1000 HU give unit attenuation.
    let p = Phantom::single_ellipse(disc(r, 1000.0), 20.0);
    let sino = project(&p, 12, 64, 1.0).unwrap();
    let mut worst: f64 = 0.0;
    for v in 0..sino.n_views {
        for k in 0..sino.n_detectors {
            let s = sino.detector_offset(k);
            let expected = if s.abs() >= r { 0.0 } else { 2.0 * (r * r - s * s).sqrt() };
            worst = worst.max((sino.values[v * 64 + k] - expected).abs());
        }
    }
    assert!(worst < 1e-9, "{worst}");
}

#[test]
fn opposite_views_are_mirror_images() {
    let p = generate_phantom(11, 5).unwrap();
    for &theta in &[0.0, 0.4, 1.3, 2.9] {
        for k in 0..40 {
            let s = -15.0 + k as f64 * 0.77;
            let a = ray_integral(&p, theta, s, MU_WATER);
            let b = ray_integral(&p, theta + std::f64::consts::PI, -s, MU_WATER);
            assert!((a - b).abs() < 1e-12);
        }
    }
}

/// Midpoint-rule line integral, step 0.01 cm.
fn ray_march(p: &Phantom, theta: f64, s: f64, mu_water: f64) -> f64 {
    let (st, ct) = theta.sin_cos();
    let h = 0.01;
    let half = p.field_of_view;
    let n = (2.0 * half / h) as usize;
    (0..n)
        .map(|i| {
            let t = -half + (i as f64 + 0.5) * h;
            p.mu_at(s * ct - t * st, s * st + t * ct, mu_water) - p.mu_at(1e9, 1e9, mu_water)
        })
        .sum::<f64>()
        * h
}

#[test]
fn two_ellipse_projection_matches_ray_marching() {
    let p = Phantom {
        ellipses: vec![
            Ellipse { center_x: 1.0, center_y: -2.0, semi_a: 8.0, semi_b: 5.0, rotation: 0.3, delta_hu: 200.0 },
            Ellipse { center_x: -3.0, center_y: 2.5, semi_a: 3.0, semi_b: 1.5, rotation: 1.1, delta_hu: 200.0 },
        ],
        field_of_view: 30.0,
        seed: 0,
    };
    let sino = project(&p, 9, 31, MU_WATER).unwrap();
    let mut worst: f64 = 0.0;
    for v in 0..sino.n_views {
        for k in 0..sino.n_detectors {
            let oracle = ray_march(&p, sino.angles[v], sino.detector_offset(k), MU_WATER);
            worst = worst.max((sino.values[v * sino.n_detectors + k] - oracle).abs());
        }
    }
    assert!(worst < 1e-3, "{worst}");
}

#[test]
fn projection_is_linear_in_ellipses() {
    let a = generate_phantom(3, 4).unwrap();
    let b = generate_phantom(4, 4).unwrap();
    let both = Phantom { ellipses: a.ellipses.iter().chain(&b.ellipses).cloned().collect(), ..a.clone() };
    let (pa, pb, pab) = (
        project(&a, 30, 96, MU_WATER).unwrap(),
        project(&b, 30, 96, MU_WATER).unwrap(),
        project(&both, 30, 96, MU_WATER).unwrap(),
    );
    for i in 0..pab.values.len() {
        assert!((pab.values[i] - pa.values[i] - pb.values[i]).abs() < 1e-9);
    }
}

#[test]
fn every_view_conserves_mass() {
    for seed in 0..5 {
        let p = generate_phantom(seed, 6).unwrap();
        let sino = project(&p, 36, 96, MU_WATER).unwrap();
        let total = p.mu_area(MU_WATER);
        for v in 0..sino.n_views {
            let s: f64 = sino.view(v).iter().sum::<f64>() * sino.detector_spacing;
            assert!((s - total).abs() / total < 5e-3, "seed {seed} view {v}: {s} vs {total}");
        }
        assert!(sino.values.iter().all(|&v| v >= 0.0 && v.is_finite()));
    }
}

#[test]
fn degenerate_ellipse_rejected() {
    let p = Phantom::single_ellipse(disc(0.0, 100.0), 20.0);
    assert!(matches!(project(&p, 4, 8, MU_WATER), Err(CtSimError::DegenerateGeometry(_))));
}

fn single_ray(l: f64) -> Sinogram {
    let mut s = Sinogram::zeros(1, 2, 1.0);
    s.values = vec![l, l];
    s
}

fn cond(dose: f64, b0: f64, r: f64) -> DoseCondition {
    DoseCondition { dose_fraction: dose, n_views: 1, b0, r }
}

fn noisy_samples(l: f64, c: &DoseCondition, draws: usize) -> Vec<f64> {
    let sino = Sinogram { values: vec![l; draws], n_detectors: draws, ..Sinogram::zeros(1, 2, 1.0) };
    insert_noise(&sino, c, 99).unwrap().values
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64)
}

#[test]
fn noise_vanishes_at_huge_dose() {
    let out = insert_noise(&single_ray(1.0), &cond(1.0, 1e12, 10.0), 1).unwrap();
    assert!(out.values.iter().all(|&v| (v - 1.0).abs() < 1e-4));
}

#[test]
fn poisson_log_noise_std_matches_delta_method() {
    let samples = noisy_samples(0.0, &cond(1.0, 1e5, 0.0), 100_000);
    let (_, var) = mean_var(&samples);
    let expected = 1.0 / 1e5f64.sqrt();
    assert!((var.sqrt() - expected).abs() / expected < 0.05, "{}", var.sqrt());
}

#[test]
fn tenth_dose_has_ten_times_variance() {
    let full = mean_var(&noisy_samples(1.0, &cond(1.0, 1e5, 10.0), 100_000)).1;
    let tenth = mean_var(&noisy_samples(1.0, &cond(0.1, 1e5, 10.0), 100_000)).1;
    let ratio = tenth / full;
    assert!((ratio - 10.0).abs() / 10.0 < 0.10, "{ratio}");
}

#[test]
fn photon_counts_are_unbiased() {
    let c = cond(0.5, 1e5, 10.0);
    let l = 2.0;
    let counts = sample_counts(l, &c, 100_000, 5).unwrap();
    let (m, var) = mean_var(&counts);
    let lambda = 0.5e5 * (-l).exp() + 10.0;
    assert!((m - lambda).abs() < 3.0 * (var / counts.len() as f64).sqrt());
}

#[test]
fn non_positive_photons_rejected() {
    assert!(matches!(insert_noise(&single_ray(1.0), &cond(0.5, 0.0, 0.0), 1), Err(CtSimError::NonPositivePhotons(_))));
}

#[test]
fn noise_is_seeded() {
    let c = cond(0.25, 1e5, 10.0);
    let a = insert_noise(&single_ray(2.0), &c, 4).unwrap();
    assert_eq!(a, insert_noise(&single_ray(2.0), &c, 4).unwrap());
    assert_ne!(a, insert_noise(&single_ray(2.0), &c, 5).unwrap());
}

#[test]
fn fbp_of_disc_within_five_percent() {
    let r = 12.0;
    let p = Phantom::single_ellipse(disc(r, 1000.0), 40.0);
    let sino = project(&p, 180, 128, MU_WATER).unwrap();
    let n = 64;
    let mu = fbp_mu(&sino, n, 40.0).unwrap();
    let px = 40.0 / n as f64;
    let (mut se, mut count) = (0.0, 0);
    for i in 0..n {
        for j in 0..n {
            let (x, y) = ((j as f64 + 0.5) * px - 20.0, 20.0 - (i as f64 + 0.5) * px);
            if x.hypot(y) < 0.8 * r {
                se += (mu[i * n + j] - MU_WATER).powi(2);
                count += 1;
            }
        }
    }
    let rel = (se / count as f64).sqrt() / MU_WATER;
    assert!(rel < 0.05, "{rel}");
}

#[test]
fn fewer_views_add_streak_energy() {
    let p = generate_phantom(21, 6).unwrap();
    let truth = p.rasterize(64);
    let background_rmse = |views: usize| {
        let img = fbp(&project(&p, views, 96, MU_WATER).unwrap(), 64, p.field_of_view, MU_WATER).unwrap();
        let (mut se, mut count) = (0.0f64, 0);
        for i in 0..64 {
            for j in 0..64 {
                let (x, y) = ((j as f64 + 0.5) * 0.625 - 20.0, 20.0 - (i as f64 + 0.5) * 0.625);
                if truth.at(i, j) == -1000.0 && x.hypot(y) < 20.0 {
                    se += (img.at(i, j) as f64 + 1000.0).powi(2);
                    count += 1;
                }
            }
        }
        (se / count as f64).sqrt()
    };
    let (dense, sparse) = (background_rmse(720), background_rmse(180));
    assert!(sparse > dense, "{sparse} vs {dense}");
}

#[test]
fn normalisation_is_monotone_and_capped() {
    let hu: Vec<f32> = (-1500..=800).step_by(7).map(|v| v as f32).collect();
    let img = Image::new(1, hu.len(), hu).unwrap();
    let n = normalize_hu(&img);
    assert!(n.pixels().windows(2).all(|w| w[0] <= w[1]));
    assert!(n.pixels().iter().all(|&v| (0.0..=1.0).contains(&v)));
    let back = n.map(|v| v * 1350.0 - 1000.0);
    let again = normalize_hu(&back);
    for (a, b) in again.pixels().iter().zip(n.pixels()) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn proxy_mos_endpoints() {
    let img = Image::from_fn(32, 32, |i, j| ((i * 7 + j * 3) % 11) as f32 / 10.0);
    let calib = MosCalibration::default();
    let rec = ImageRecord {
        id: "x".into(),
        image: img.clone(),
        reference: Some(Arc::new(img.clone())),
        condition: DoseCondition { dose_fraction: 1.0, n_views: 180, b0: 1e5, r: 10.0 },
        phantom_seed: 0,
        proxy_mos: None,
    };
    assert!((assign_proxy_mos(&rec, &calib).unwrap() - 4.0).abs() < 1e-12);
    assert_eq!(score_from_ssim(calib.s0, &calib), 0.0);
    assert_eq!(score_from_ssim(calib.s1, &calib), 4.0);
    let orphan = ImageRecord { reference: None, ..rec };
    assert!(matches!(assign_proxy_mos(&orphan, &calib), Err(CtSimError::MissingReference)));
}

fn small_config(n: usize) -> SimConfig {
    SimConfig { n_phantoms: n, ..SimConfig::default() }
}

#[test]
fn per_phantom_scores_fall_with_dose_and_views() {
    let config = small_config(4);
    for p in 0..4 {
        let sample = simulate_phantom(&config, p).unwrap();
        let score = |d: usize, v: usize| sample.records[d * 3 + v].proxy_mos.unwrap();
        for d in 0..4 {
            for v in 0..3 {
                if d + 1 < 4 {
                    assert!(score(d + 1, v) <= score(d, v), "phantom {p} dose step {d} views {v}");
                }
                if v + 1 < 3 {
                    assert!(score(d, v + 1) <= score(d, v), "phantom {p} dose {d} view step {v}");
                }
            }
        }
    }
}

#[test]
fn mean_scores_fall_strictly_over_fifty_phantoms() {
    let config = small_config(50);
    let mut mean = [[0.0f64; 3]; 4];
    for p in 0..50 {
        for r in simulate_phantom(&config, p).unwrap().records {
            let d = config.dose_grid.iter().position(|&x| x == r.condition.dose_fraction).unwrap();
            let v = config.view_grid.iter().position(|&x| x == r.condition.n_views).unwrap();
            mean[d][v] += r.proxy_mos.unwrap() / 50.0;
        }
    }
    eprintln!("mean proxy-MOS (dose rows, view cols): {mean:?}");
    for d in 0..4 {
        for v in 0..3 {
            if d + 1 < 4 {
                assert!(mean[d + 1][v] < mean[d][v]);
            }
            if v + 1 < 3 {
                assert!(mean[d][v + 1] < mean[d][v]);
            }
        }
    }
}

#[test]
fn dataset_layout_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(3);
    let out = dir.path().join("ds");
    let rows = build_dataset(&config, &out).unwrap();
    assert_eq!(rows.len(), 36);
    let refs = std::fs::read_dir(out.join("references"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "ctiq"));
    assert_eq!(refs.count(), 3);
    let first = std::fs::read(out.join(MANIFEST)).unwrap();
    let header = String::from_utf8(first.clone()).unwrap();
    assert!(header.starts_with("id,path,reference_path,dose_fraction,n_views,proxy_mos\n"));
    let conds: std::collections::BTreeSet<_> =
        rows.iter().map(|r| ((r.dose_fraction * 100.0) as u32, r.n_views)).collect();
    assert_eq!(conds.len(), 12);

    let planes = read_ctiq(&out.join(&rows[5].path)).unwrap();
    assert_eq!(planes.len(), 1);
    assert!(planes[0].pixels().iter().all(|&v| (0.0..=1.0).contains(&v)));
    let sidecar: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join(&rows[5].path).with_extension("json")).unwrap()).unwrap();
    assert_eq!(sidecar["is_reference"], false);
    assert_eq!(sidecar["proxy_mos"].as_f64().unwrap(), rows[5].proxy_mos);

    build_dataset(&config, &out).unwrap();
    assert_eq!(std::fs::read(out.join(MANIFEST)).unwrap(), first);
    assert_eq!(Dataset::open(&out).unwrap().rows, rows);
}
