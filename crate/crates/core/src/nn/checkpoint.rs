//! Checkpoint container.
//!
//! Layout: the 8-byte magic `AADCKPT1`, the header length as a little-endian
//! `u64`, a UTF-8 JSON header, then every tensor of the parameter store as
//! little-endian `f32` values, in store order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ParamKind, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"AADCKPT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub architecture: String,
    /// Serialized model graph.
    pub graph: serde_json::Value,
    pub seed: u64,
    pub epoch: usize,
    pub best_val_loss: Option<f64>,
    pub tensors: Vec<TensorInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let json = serde_json::to_vec(&self.header)?;
        let n_values: usize = self.params.entries().iter().map(|e| e.value.len()).sum();
        let mut out = Vec::with_capacity(16 + json.len() + 4 * n_values);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for e in self.params.entries() {
            for v in e.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing AADCKPT1 magic".into()));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes
            .get(16..16usize.saturating_add(hlen))
            .ok_or_else(|| bad(format!("header length {hlen} exceeds file size")))?;
        let header: CheckpointHeader = serde_json::from_slice(body)?;
        let mut blob = &bytes[16 + hlen..];
        let mut params = ParamStore::new();
        for t in &header.tensors {
            let n: usize = t.shape.iter().product();
            if blob.len() < 4 * n {
                return Err(bad(format!("tensor `{}` is truncated", t.name)));
            }
            let data = blob[..4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            blob = &blob[4 * n..];
            params.add(t.name.clone(), t.kind, Tensor::new(t.shape.clone(), data)?);
        }
        if !blob.is_empty() {
            return Err(bad(format!("{} trailing bytes after the last tensor", blob.len())));
        }
        Ok(Self { header, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Tensor table describing `store` in order.
pub fn tensor_table(store: &ParamStore<f32>) -> Vec<TensorInfo> {
    store
        .entries()
        .iter()
        .map(|e| TensorInfo {
            name: e.name.clone(),
            kind: e.kind,
            shape: e.value.shape().to_vec(),
        })
        .collect()
}
