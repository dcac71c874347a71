//! Model checkpoints: magic, a length-prefixed JSON header, then little-endian
//! f32 parameter blobs in name order. Optional Adam moments follow the values
//! (all first moments, then all second moments, same order).

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsutil::atomic_write;
use crate::numerics::{ParamStore, Tensor};

pub const MAGIC: &[u8; 8] = b"CTCKPT1\0";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("truncated checkpoint")]
    Truncated,
    #[error("header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint does not match model: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    #[serde(default)]
    pub adam_step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// Model family, e.g. `"tiny-unet"` or `"evaluator"`.
    pub kind: String,
    /// Architecture description needed to rebuild the model.
    pub spec: serde_json::Value,
    pub params: Vec<ParamEntry>,
    pub step: usize,
    pub optimizer: bool,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub store: ParamStore<f32>,
}

fn sorted_indices(store: &ParamStore<f32>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..store.len()).collect();
    let names: Vec<&str> = store.iter().map(|p| p.name.as_str()).collect();
    idx.sort_by_key(|&i| names[i]);
    idx
}

pub fn encode(kind: &str, spec: serde_json::Value, store: &ParamStore<f32>, step: usize, optimizer: bool) -> Vec<u8> {
    let params: Vec<_> = store.iter().collect();
    let order = sorted_indices(store);
    let header = CheckpointHeader {
        kind: kind.to_string(),
        spec,
        params: order
            .iter()
            .map(|&i| ParamEntry {
                name: params[i].name.clone(),
                shape: params[i].value.shape().to_vec(),
                adam_step: params[i].adam.step,
            })
            .collect(),
        step,
        optimizer,
    };
    let json = serde_json::to_vec(&header).expect("header serialises");
    let mut out = Vec::with_capacity(12 + json.len() + 4 * store.num_values() * if optimizer { 3 } else { 1 });
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let mut blobs: Vec<&Tensor<f32>> = order.iter().map(|&i| &params[i].value).collect();
    if optimizer {
        blobs.extend(order.iter().map(|&i| &params[i].adam.m));
        blobs.extend(order.iter().map(|&i| &params[i].adam.v));
    }
    for t in blobs {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = bytes.get(12..12 + hlen).ok_or(CheckpointError::Truncated)?;
    let header: CheckpointHeader = serde_json::from_slice(body)?;
    let mut cursor = 12 + hlen;
    let mut read_tensor = |shape: &[usize]| -> Result<Tensor<f32>, CheckpointError> {
        let n: usize = shape.iter().product();
        let raw = bytes.get(cursor..cursor + 4 * n).ok_or(CheckpointError::Truncated)?;
        cursor += 4 * n;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Tensor::new(shape.to_vec(), data).map_err(|e| CheckpointError::Mismatch(e.to_string()))
    };
    let mut store = ParamStore::new();
    for p in &header.params {
        store.add(p.name.clone(), read_tensor(&p.shape)?);
    }
    if header.optimizer {
        for (i, p) in header.params.iter().enumerate() {
            let m = read_tensor(&p.shape)?;
            let param = store.get_mut(crate::numerics::ParamId(i));
            param.adam.m = m;
            param.adam.step = p.adam_step;
        }
        for (i, p) in header.params.iter().enumerate() {
            store.get_mut(crate::numerics::ParamId(i)).adam.v = read_tensor(&p.shape)?;
        }
    }
    if cursor != bytes.len() {
        return Err(CheckpointError::Mismatch(format!("{} trailing bytes", bytes.len() - cursor)));
    }
    Ok(Checkpoint { header, store })
}

pub fn save(
    path: &Path,
    kind: &str,
    spec: serde_json::Value,
    store: &ParamStore<f32>,
    step: usize,
    optimizer: bool,
) -> Result<(), CheckpointError> {
    Ok(atomic_write(path, &encode(kind, spec, store, step, optimizer))?)
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    decode(&std::fs::read(path)?)
}

/// Copies values (and optimiser state, if present) into `target` by name.
pub fn restore_into(ckpt: &Checkpoint, target: &mut ParamStore<f32>) -> Result<(), CheckpointError> {
    if ckpt.store.len() != target.len() {
        return Err(CheckpointError::Mismatch(format!(
            "{} parameters in checkpoint, model has {}",
            ckpt.store.len(),
            target.len()
        )));
    }
    for p in target.iter_mut() {
        let src = ckpt
            .store
            .by_name(&p.name)
            .ok_or_else(|| CheckpointError::Mismatch(format!("missing parameter {}", p.name)))?;
        if src.value.shape() != p.value.shape() {
            return Err(CheckpointError::Mismatch(format!(
                "{}: shape {:?} vs {:?}",
                p.name,
                src.value.shape(),
                p.value.shape()
            )));
        }
        p.value = src.value.clone();
        if ckpt.header.optimizer {
            p.adam = src.adam.clone();
        }
    }
    Ok(())
}
