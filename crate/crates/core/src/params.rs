//! Named parameter storage, fingerprints and the `bb-ckpt-1` checkpoint format.
//!
//! Every trainable tensor of a model lives in one [`ParamStore`] under a
//! dotted path such as `qformer.query_bank`. Freezing is a per-tensor flag;
//! fingerprints are SHA-256 digests over a path prefix and are what the
//! trainer uses to prove that frozen parameter sets stayed bitwise unchanged.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: &str = "bb-ckpt-1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a trainable tensor under `name`.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter path {name}")));
        }
        let id = ParamId(self.tensors.len());
        self.names.push(name.clone());
        self.tensors.push(tensor.with_requires_grad(true));
        self.index.insert(name, id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn ids_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.index
            .range(prefix.to_string()..)
            .take_while(move |(k, _)| k.starts_with(prefix))
            .map(|(_, &id)| id)
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        self.ids_with_prefix(prefix).next().is_some()
    }

    /// Sets the trainable flag on every parameter under `prefix`; returns the count.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) -> usize {
        let ids: Vec<ParamId> = self.ids_with_prefix(prefix).collect();
        for &id in &ids {
            self.tensors[id.0].set_requires_grad(trainable);
        }
        ids.len()
    }

    /// Copies the values under `prefix` from a store with the same layout.
    pub fn copy_prefix_from(&mut self, other: &ParamStore, prefix: &str) -> Result<usize> {
        let ids: Vec<ParamId> = self.ids_with_prefix(prefix).collect();
        for &id in &ids {
            let name = &self.names[id.0];
            let src = other
                .by_name(name)
                .filter(|t| t.shape() == self.tensors[id.0].shape())
                .ok_or_else(|| Error::Invalid(format!("source store has no matching parameter {name}")))?;
            self.tensors[id.0].values_mut().copy_from_slice(src.values());
        }
        Ok(ids.len())
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        for t in &mut self.tensors {
            t.set_requires_grad(trainable);
        }
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            t.zero_grad();
        }
    }

    pub fn num_values(&self, prefix: &str) -> usize {
        self.ids_with_prefix(prefix).map(|id| self.get(id).numel()).sum()
    }

    /// SHA-256 over (path, shape, value bits) of every parameter under `prefix`,
    /// in path order. Hex-encoded.
    pub fn fingerprint(&self, prefix: &str) -> String {
        let mut hasher = Sha256::new();
        for id in self.ids_with_prefix(prefix) {
            let t = self.get(id);
            hasher.update(self.name(id).as_bytes());
            hasher.update([0u8]);
            for &d in t.shape() {
                hasher.update((d as u64).to_le_bytes());
            }
            for &v in t.values() {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Checkpoint {
        let params = self
            .index
            .iter()
            .map(|(name, &id)| {
                let t = self.get(id);
                (
                    name.clone(),
                    CheckpointEntry {
                        shape: t.shape().to_vec(),
                        data: encode_values(t.values()),
                    },
                )
            })
            .collect();
        Checkpoint {
            version: CHECKPOINT_VERSION.to_string(),
            meta,
            params,
        }
    }

    /// Overwrites values from a checkpoint. Every stored parameter must be
    /// present with a matching shape; extra checkpoint entries are an error.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        ckpt.check_version()?;
        for name in ckpt.params.keys() {
            if !self.index.contains_key(name) {
                return Err(Error::Checkpoint(format!("unexpected parameter {name}")));
            }
        }
        for (name, &id) in &self.index {
            let entry = ckpt
                .params
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            let t = &mut self.tensors[id.0];
            if entry.shape != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {name}: checkpoint {:?}, model {:?}",
                    entry.shape,
                    t.shape()
                )));
            }
            let values =
                decode_values(&entry.data, t.numel()).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
            t.values_mut().copy_from_slice(&values);
        }
        Ok(())
    }

    /// Loads only the parameters under `prefix`, leaving the rest untouched.
    pub fn load_prefix(&mut self, ckpt: &Checkpoint, prefix: &str) -> Result<usize> {
        ckpt.check_version()?;
        let ids: Vec<ParamId> = self.ids_with_prefix(prefix).collect();
        for &id in &ids {
            let name = self.names[id.0].clone();
            let entry = ckpt
                .params
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            let t = &mut self.tensors[id.0];
            if entry.shape != t.shape() {
                return Err(Error::Checkpoint(format!("shape mismatch for {name}")));
            }
            let values = decode_values(&entry.data, t.numel()).map_err(Error::Checkpoint)?;
            t.values_mut().copy_from_slice(&values);
        }
        Ok(ids.len())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub shape: Vec<usize>,
    /// Base64 of the little-endian `f64` values.
    pub data: String,
}

/// On-disk checkpoint: `{"version": "bb-ckpt-1", "meta": {...}, "params": {path: entry}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: String,
    #[serde(default)]
    pub meta: serde_json::Value,
    pub params: BTreeMap<String, CheckpointEntry>,
}

impl Checkpoint {
    fn check_version(&self) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {:?}, expected {CHECKPOINT_VERSION}",
                self.version
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        ckpt.check_version()?;
        Ok(ckpt)
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        let entry = self
            .params
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
        let numel = entry.shape.iter().product();
        let values = decode_values(&entry.data, numel).map_err(Error::Checkpoint)?;
        Tensor::new(entry.shape.clone(), values)
    }
}

pub fn encode_values(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    B64.encode(bytes)
}

pub fn decode_values(data: &str, numel: usize) -> std::result::Result<Vec<f64>, String> {
    let bytes = B64.decode(data).map_err(|e| format!("bad base64: {e}"))?;
    if bytes.len() != numel * 8 {
        return Err(format!("expected {} bytes, found {}", numel * 8, bytes.len()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}
