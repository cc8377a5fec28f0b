//! Model checkpoint container.
//!
//! Layout, little-endian: `"RGMD"`, `u16` version, `u32` length of a JSON
//! header (config, vocabulary, history, parameter names and shapes), the
//! header itself, then every parameter as `f32` values in declared order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EpochRecord, ModelConfig, TrainedModel};
use crate::dataio::write_atomic;
use crate::error::{Error, Result};
use crate::ndiff::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RGMD";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocabulary: Vec<String>,
    history: Vec<EpochRecord>,
    params: Vec<(String, Vec<usize>)>,
}

/// Checkpoint file contents.
pub fn encode_checkpoint(model: &TrainedModel) -> Result<Vec<u8>> {
    let header = Header {
        config: model.config.clone(),
        vocabulary: model.vocabulary.clone(),
        history: model.history.clone(),
        params: model
            .param_specs()
            .iter()
            .map(|s| (s.name.clone(), s.shape.clone()))
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(10 + json.len() + 4 * model.param_count());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for p in model.params() {
        for v in p.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TrainedModel> {
    let corrupt = |m: &str| Error::Corrupt(format!("checkpoint: {m}"));
    if bytes.len() < 10 {
        return Err(corrupt("header truncated"));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let len = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    let json = bytes
        .get(10..10 + len)
        .ok_or_else(|| corrupt("config block truncated"))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| corrupt(&e.to_string()))?;
    let mut payload = &bytes[10 + len..];
    let mut params = Vec::with_capacity(header.params.len());
    for (name, shape) in &header.params {
        let n: usize = shape.iter().product();
        if payload.len() < 4 * n {
            return Err(corrupt(&format!("parameter {name} truncated")));
        }
        let (head, rest) = payload.split_at(4 * n);
        let data = head
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        params.push(Tensor::new(shape, data)?);
        payload = rest;
    }
    if !payload.is_empty() {
        return Err(corrupt(&format!("{} trailing bytes", payload.len())));
    }
    let model = TrainedModel::from_parts(header.config, header.vocabulary, header.history, params)?;
    if model
        .param_specs()
        .iter()
        .zip(&header.params)
        .any(|(s, (name, _))| &s.name != name)
    {
        return Err(Error::shape(
            "parameter order of the config",
            "different parameter names",
        ));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &TrainedModel, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(model)?)
}

pub fn load_checkpoint(path: &Path) -> Result<TrainedModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
