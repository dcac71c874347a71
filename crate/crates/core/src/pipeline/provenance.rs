use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::fsutil::atomic_write;

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

pub const FILE: &str = "provenance.json";

/// Hex SHA-256 of the canonical JSON encoding of `value`.
pub fn digest<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serialisable");
    Sha256::digest(&bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub stage: String,
    /// Identity of this artifact: its own settings plus every upstream hash.
    pub hash: String,
    /// Hash of the whole experiment config, paths excluded.
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub upstream: BTreeMap<String, String>,
}

impl Provenance {
    pub fn write(&self, dir: &Path) -> Result<(), PipelineError> {
        let mut json = serde_json::to_vec_pretty(self).expect("serialisable");
        json.push(b'\n');
        Ok(atomic_write(&dir.join(FILE), &json)?)
    }

    pub fn read(dir: &Path) -> Result<Option<Self>, PipelineError> {
        let path = dir.join(FILE);
        if !path.exists() {
            return Ok(None);
        }
        let bytes = std::fs::read(&path)?;
        serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| PipelineError::Mismatch(format!("{}: {e}", path.display())))
    }

    /// Fails with `MissingUpstream` if absent and `Mismatch` if built from other settings.
    pub fn require(dir: &Path, stage: &str, expected_hash: &str) -> Result<Self, PipelineError> {
        let prov = Self::read(dir)?
            .ok_or_else(|| PipelineError::MissingUpstream(format!("{stage} artifact at {}", dir.display())))?;
        if prov.stage != stage || prov.hash != expected_hash {
            return Err(PipelineError::Mismatch(format!(
                "{} was built as {} {} but the current config needs {stage} {expected_hash}",
                dir.display(),
                prov.stage,
                prov.hash
            )));
        }
        Ok(prov)
    }
}
