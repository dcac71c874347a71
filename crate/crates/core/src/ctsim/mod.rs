//! Synthetic CT: ellipse phantoms, analytic parallel-beam projection,
//! Poisson transmission noise, sparse views and filtered backprojection.
//!
//! Attenuation follows `μ = μ_water (1 + HU/1000)` with `μ_water = 0.2 cm⁻¹`
//! unless configured otherwise.

mod dataset;
mod fbp;
mod noise;
mod phantom;
mod projection;

use thiserror::Error;

pub use dataset::{
    assign_proxy_mos, build_dataset, phantom_index, read_manifest, record_id, reference_id, score_from_ssim,
    simulate_phantom, write_manifest, Dataset, ImageRecord, ManifestRow, MosCalibration, PhantomSample, Sidecar,
    SimConfig, MANIFEST,
};
pub use fbp::{fbp, fbp_mu, filter_view, normalize_hu, ram_lak};
pub use noise::{insert_noise, sample_counts, DoseCondition, COUNT_FLOOR};
pub use phantom::{generate_phantom, generate_phantom_in, Ellipse, Phantom, AIR_HU, DEFAULT_FOV_CM};
pub use projection::{
    covering_spacing, detector_offset, project, project_with_spacing, ray_integral, view_angles, Sinogram,
    PARALLEL_BEAM,
};

pub const MU_WATER: f64 = 0.2;

#[derive(Debug, Error)]
pub enum CtSimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("non-positive photon count {0}")]
    NonPositivePhotons(f64),
    #[error("detectors reach {reach:.3} cm but the scan circle has radius {radius:.3} cm")]
    InsufficientDetectorCoverage { reach: f64, radius: f64 },
    #[error("record has no reference image")]
    MissingReference,
    #[error(transparent)]
    Ssim(#[from] crate::dissim::DissimError),
    #[error(transparent)]
    Image(#[from] crate::image::ImageError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
