//! Parameter checkpoints.
//!
//! A checkpoint is a directory holding `params.bin` and `manifest.json`.
//! `params.bin` is a sequence of records, all integers little-endian:
//!
//! ```text
//! u32 name_len | name (UTF-8) | u32 ndim | u64 dim × ndim | u64 count | f64 × count
//! ```
//!
//! The manifest names the format, lists the records and carries a hash of
//! the configuration that produced them plus the configuration itself.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const FORMAT: &str = "pathmatch-ckpt-v1";
pub const PARAMS_FILE: &str = "params.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub records: Vec<RecordInfo>,
}

/// Hex SHA-256 of the compact JSON encoding of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn encode_params(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    for (_, name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&(t.len() as u64).to_le_bytes());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Data("truncated checkpoint record".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_params(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    let mut out = Vec::new();
    while c.pos < bytes.len() {
        let name_len = c.u32()? as usize;
        let name = String::from_utf8(c.take(name_len)?.to_vec())
            .map_err(|_| Error::Data("checkpoint name is not UTF-8".into()))?;
        let ndim = c.u32()? as usize;
        let shape = (0..ndim).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count = c.u64()? as usize;
        let raw = c.take(count.checked_mul(8).ok_or_else(|| Error::Data("record too large".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

pub fn save<C: Serialize>(dir: &Path, store: &ParamStore, config: &C) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        format: FORMAT.to_string(),
        config_hash: config_hash(config)?,
        config: serde_json::to_value(config)?,
        records: store
            .iter()
            .map(|(_, name, t)| RecordInfo {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let pp = dir.join(PARAMS_FILE);
    fs::File::create(&pp)
        .and_then(|mut f| f.write_all(&encode_params(store)))
        .map_err(|e| Error::io(&pp, e))?;
    let mp = dir.join(MANIFEST_FILE);
    fs::write(&mp, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&mp, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let mp = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != FORMAT {
        return Err(Error::Data(format!("unknown checkpoint format {}", manifest.format)));
    }
    Ok(manifest)
}

/// Overwrite every parameter of `store` from the checkpoint in `dir`.
/// Names and shapes must match exactly.
pub fn load_into(dir: &Path, store: &mut ParamStore) -> Result<Manifest> {
    let manifest = read_manifest(dir)?;
    let pp = dir.join(PARAMS_FILE);
    let mut bytes = Vec::new();
    fs::File::open(&pp)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(&pp, e))?;
    let records = decode_params(&bytes)?;
    if records.len() != store.len() {
        return Err(Error::Data(format!(
            "checkpoint has {} tensors, model has {}",
            records.len(),
            store.len()
        )));
    }
    for (name, t) in records {
        let id = store
            .id(&name)
            .ok_or_else(|| Error::Data(format!("checkpoint tensor {name} unknown to model")))?;
        if store.get(id).shape() != t.shape() {
            return Err(Error::Data(format!(
                "{name}: checkpoint shape {:?} vs model {:?}",
                t.shape(),
                store.get(id).shape()
            )));
        }
        *store.get_mut(id) = t;
    }
    Ok(manifest)
}
