use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fbp, generate_phantom_in, insert_noise, normalize_hu, project, CtSimError, DoseCondition};
use crate::dissim::mean_ssim;
use crate::fsutil;
use crate::image::{write_ctiq, Image};
use crate::seed;

/// Linear SSIM-to-score calibration endpoints.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MosCalibration {
    pub s0: f64,
    pub s1: f64,
}

impl Default for MosCalibration {
    fn default() -> Self {
        Self { s0: 0.30, s1: 0.98 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_phantoms: usize,
    pub complexity: usize,
    pub seed: u64,
    pub image_size: usize,
    pub n_detectors: usize,
    pub full_views: usize,
    pub view_grid: Vec<usize>,
    pub dose_grid: Vec<f64>,
    pub b0: f64,
    pub readout: f64,
    pub fov_cm: f64,
    pub mu_water: f64,
    pub calibration: MosCalibration,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_phantoms: 200,
            complexity: 6,
            seed: 2024,
            image_size: 64,
            n_detectors: 96,
            full_views: 180,
            view_grid: vec![180, 90, 45],
            dose_grid: vec![1.0, 0.5, 0.25, 0.10],
            b0: 1e5,
            readout: 10.0,
            fov_cm: super::phantom::DEFAULT_FOV_CM,
            mu_water: super::MU_WATER,
            calibration: MosCalibration::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), CtSimError> {
        let bad = |m: String| Err(CtSimError::Config(m));
        if self.n_phantoms == 0 {
            return bad("n_phantoms must be positive".into());
        }
        if self.complexity == 0 {
            return bad("complexity must be positive".into());
        }
        if self.view_grid.is_empty() || self.dose_grid.is_empty() {
            return bad("empty condition grid".into());
        }
        if let Some(v) = self.view_grid.iter().find(|&&v| v == 0 || !self.full_views.is_multiple_of(v)) {
            return bad(format!("view count {v} does not divide {} full views", self.full_views));
        }
        if let Some(d) = self.dose_grid.iter().find(|&&d| !(d > 0.0 && d <= 1.0)) {
            return bad(format!("dose fraction {d} outside (0, 1]"));
        }
        if !(self.b0 > 0.0) || self.readout < 0.0 || !(self.mu_water > 0.0) || !(self.fov_cm > 0.0) {
            return bad("b0, mu_water and fov_cm must be positive; readout non-negative".into());
        }
        if !(self.calibration.s0 < self.calibration.s1) {
            return bad("calibration needs s0 < s1".into());
        }
        Ok(())
    }

    pub fn conditions(&self) -> Vec<DoseCondition> {
        DoseCondition::grid(&self.dose_grid, &self.view_grid, self.b0, self.readout)
    }

    pub fn phantom_seed(&self, index: usize) -> u64 {
        seed::derive(self.seed, index as u64)
    }
}

/// One distorted image with its full-quality reference.
#[derive(Clone, Debug)]
pub struct ImageRecord {
    pub id: String,
    pub image: Image,
    pub reference: Option<Arc<Image>>,
    pub condition: DoseCondition,
    pub phantom_seed: u64,
    pub proxy_mos: Option<f64>,
}

/// `4 · clamp((SSIM − s0) / (s1 − s0), 0, 1)` against the record's reference.
pub fn assign_proxy_mos(record: &ImageRecord, calib: &MosCalibration) -> Result<f64, CtSimError> {
    let reference = record.reference.as_ref().ok_or(CtSimError::MissingReference)?;
    if !(calib.s0 < calib.s1) {
        return Err(CtSimError::Config("calibration needs s0 < s1".into()));
    }
    let ssim = mean_ssim(&record.image, reference)?;
    Ok(score_from_ssim(ssim, calib))
}

pub fn score_from_ssim(ssim: f64, calib: &MosCalibration) -> f64 {
    4.0 * ((ssim - calib.s0) / (calib.s1 - calib.s0)).clamp(0.0, 1.0)
}

pub fn record_id(phantom: usize, cond: &DoseCondition) -> String {
    format!("p{phantom:04}_d{:03}_v{:03}", (cond.dose_fraction * 100.0).round() as u32, cond.n_views)
}

/// Phantom index encoded in a record or reference id.
pub fn phantom_index(id: &str) -> Option<usize> {
    id.strip_prefix('p')?.split('_').next()?.parse().ok()
}

pub fn reference_id(phantom: usize) -> String {
    format!("p{phantom:04}_ref")
}

/// Everything simulated for one phantom.
#[derive(Clone, Debug)]
pub struct PhantomSample {
    pub index: usize,
    pub phantom_seed: u64,
    pub reference: Arc<Image>,
    pub records: Vec<ImageRecord>,
}

/// Reference (noise-free, full views) plus one labelled record per condition.
pub fn simulate_phantom(config: &SimConfig, index: usize) -> Result<PhantomSample, CtSimError> {
    let phantom_seed = config.phantom_seed(index);
    let phantom = generate_phantom_in(phantom_seed, config.complexity, config.fov_cm)?;
    let clean = project(&phantom, config.full_views, config.n_detectors, config.mu_water)?;
    let recon = |sino: &super::Sinogram| -> Result<Image, CtSimError> {
        Ok(normalize_hu(&fbp(sino, config.image_size, config.fov_cm, config.mu_water)?))
    };
    let reference = Arc::new(recon(&clean)?);
    let mut records = Vec::new();
    for (ci, cond) in config.conditions().iter().enumerate() {
        let sparse = clean.subsample_views(config.full_views / cond.n_views)?;
        let noisy = insert_noise(&sparse, cond, seed::derive(phantom_seed, ci as u64))?;
        let mut record = ImageRecord {
            id: record_id(index, cond),
            image: recon(&noisy)?,
            reference: Some(reference.clone()),
            condition: *cond,
            phantom_seed,
            proxy_mos: None,
        };
        record.proxy_mos = Some(assign_proxy_mos(&record, &config.calibration)?);
        records.push(record);
    }
    Ok(PhantomSample { index, phantom_seed, reference, records })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    pub path: String,
    pub reference_path: String,
    pub dose_fraction: f64,
    pub n_views: usize,
    pub proxy_mos: f64,
}

#[derive(Serialize, Deserialize)]
pub struct Sidecar {
    pub phantom_seed: u64,
    pub dose_fraction: f64,
    pub n_views: usize,
    pub proxy_mos: Option<f64>,
    pub is_reference: bool,
}

pub const MANIFEST: &str = "manifest.csv";

fn write_image(dir: &Path, rel: &str, img: &Image, sidecar: &Sidecar) -> Result<(), CtSimError> {
    let path = dir.join(rel);
    write_ctiq(&path, &[img])?;
    let json = serde_json::to_vec_pretty(sidecar).map_err(|e| CtSimError::Config(e.to_string()))?;
    std::fs::write(path.with_extension("json"), json)?;
    Ok(())
}

/// Writes every record and reference plus `manifest.csv` into `out_dir`.
///
/// The directory is assembled under a temporary name and renamed into place.
pub fn build_dataset(config: &SimConfig, out_dir: &Path) -> Result<Vec<ManifestRow>, CtSimError> {
    config.validate()?;
    fsutil::replace_dir(out_dir, |dir| {
        std::fs::create_dir_all(dir.join("images"))?;
        std::fs::create_dir_all(dir.join("references"))?;
        let per_phantom: Vec<Result<Vec<ManifestRow>, CtSimError>> = (0..config.n_phantoms)
            .into_par_iter()
            .map(|p| {
                let sample = simulate_phantom(config, p)?;
                let ref_rel = format!("references/{}.ctiq", reference_id(p));
                write_image(
                    dir,
                    &ref_rel,
                    &sample.reference,
                    &Sidecar {
                        phantom_seed: sample.phantom_seed,
                        dose_fraction: 1.0,
                        n_views: config.full_views,
                        proxy_mos: Some(4.0),
                        is_reference: true,
                    },
                )?;
                sample
                    .records
                    .iter()
                    .map(|r| {
                        let rel = format!("images/{}.ctiq", r.id);
                        let mos = r.proxy_mos.expect("labelled during simulation");
                        write_image(
                            dir,
                            &rel,
                            &r.image,
                            &Sidecar {
                                phantom_seed: r.phantom_seed,
                                dose_fraction: r.condition.dose_fraction,
                                n_views: r.condition.n_views,
                                proxy_mos: Some(mos),
                                is_reference: false,
                            },
                        )?;
                        Ok(ManifestRow {
                            id: r.id.clone(),
                            path: rel,
                            reference_path: ref_rel.clone(),
                            dose_fraction: r.condition.dose_fraction,
                            n_views: r.condition.n_views,
                            proxy_mos: mos,
                        })
                    })
                    .collect()
            })
            .collect();
        let mut rows = Vec::with_capacity(config.n_phantoms * config.conditions().len());
        for r in per_phantom {
            rows.extend(r?);
        }
        write_manifest(&dir.join(MANIFEST), &rows)?;
        Ok(rows)
    })
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<(), CtSimError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>, CtSimError> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(CtSimError::from)).collect()
}

/// A dataset directory on disk.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub rows: Vec<ManifestRow>,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self, CtSimError> {
        let rows = read_manifest(&root.join(MANIFEST))?;
        Ok(Self { root: root.to_path_buf(), rows })
    }

    pub fn load_image(&self, rel: &str) -> Result<Image, CtSimError> {
        let mut planes = crate::image::read_ctiq(&self.root.join(rel))?;
        if planes.len() != 1 {
            return Err(CtSimError::Config(format!("{rel}: expected one plane, found {}", planes.len())));
        }
        Ok(planes.remove(0))
    }
}
