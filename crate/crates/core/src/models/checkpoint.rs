//! Checkpoint container:
//!
//! ```text
//! magic (8 bytes) | header length (u64 LE) | JSON header | f32 LE payload
//! ```
//!
//! The header carries the format version, the model spec, the training
//! history and the name, shape and length of every tensor in payload order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_model, History, ModelKind, ModelSpec, TrainedModel};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"BPSEGCKP";
/// Semantic version of the container; loading requires the same major.
pub const CHECKPOINT_VERSION: &str = "1.0.0";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: String,
    spec: ModelSpec,
    history: History,
    tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let params = model.model.params();
    let header = Header {
        format_version: CHECKPOINT_VERSION.to_string(),
        spec: *model.spec(),
        history: model.history.clone(),
        tensors: params
            .iter()
            .map(|(_, p)| TensorEntry {
                name: p.name.clone(),
                shape: p.shape.clone(),
                len: p.value.len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let payload: usize = params.iter().map(|(_, p)| p.value.len()).sum();
    let mut buf = Vec::with_capacity(16 + json.len() + 4 * payload);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for (_, p) in params.iter() {
        for v in &p.value {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn major(v: &str) -> Option<u64> {
    let parts: Vec<_> = v.split('.').collect();
    if parts.len() != 3 || parts.iter().any(|p| p.parse::<u64>().is_err()) {
        return None;
    }
    parts[0].parse().ok()
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: String| Error::Checkpoint(format!("{}: {msg}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file (bad magic)".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if hlen > body.len() {
        return Err(bad("truncated header".into()));
    }
    let raw: serde_json::Value =
        serde_json::from_slice(&body[..hlen]).map_err(|e| bad(format!("corrupt header: {e}")))?;
    let found = raw
        .get("format_version")
        .and_then(|v| v.as_str())
        .unwrap_or("<missing>")
        .to_string();
    if major(&found) != major(CHECKPOINT_VERSION) {
        return Err(bad(format!(
            "format version {found} is incompatible with supported version {CHECKPOINT_VERSION}"
        )));
    }
    let header: Header =
        serde_json::from_value(raw).map_err(|e| bad(format!("corrupt header: {e}")))?;

    let mut model = build_model(header.spec, 0).map_err(|e| bad(format!("invalid spec: {e}")))?;
    let mut data = &body[hlen..];
    if header.tensors.len() != model.params.len() {
        return Err(bad(format!(
            "expected {} tensors for {}, found {}",
            model.params.len(),
            header.spec.kind,
            header.tensors.len()
        )));
    }
    for t in &header.tensors {
        let id = model
            .params
            .find(&t.name)
            .ok_or_else(|| bad(format!("unexpected tensor {}", t.name)))?;
        if model.params.get(id).shape != t.shape || t.shape.iter().product::<usize>() != t.len {
            return Err(bad(format!("tensor {} has shape {:?}", t.name, t.shape)));
        }
        if data.len() < 4 * t.len {
            return Err(bad("truncated payload".into()));
        }
        let (chunk, rest) = data.split_at(4 * t.len);
        *model.params.value_mut(id) = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        data = rest;
    }
    if !data.is_empty() {
        return Err(bad(format!("{} trailing bytes", data.len())));
    }
    Ok(TrainedModel {
        model,
        history: header.history,
    })
}

/// [`load_checkpoint`] that also requires the stored model kind.
pub fn load_checkpoint_as(path: impl AsRef<Path>, kinds: &[ModelKind]) -> Result<TrainedModel> {
    let path = path.as_ref();
    let m = load_checkpoint(path)?;
    if !kinds.contains(&m.kind()) {
        return Err(Error::Checkpoint(format!(
            "{}: holds a {} model, expected one of {:?}",
            path.display(),
            m.kind(),
            kinds
        )));
    }
    Ok(m)
}
