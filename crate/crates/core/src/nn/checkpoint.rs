//! Parameter checkpoints.
//!
//! A checkpoint is a JSON manifest plus a raw data file. The data file is the
//! concatenation, in manifest order, of every parameter's values as
//! little-endian IEEE-754 `f64`, row-major. Entry `offset`/`len` are counted
//! in values (multiply by 8 for bytes). The manifest carries the CRC-32 of
//! the whole data file and the LSTM gate order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NnError, ParamStore};
use crate::tensor::Tensor;

pub const FORMAT: &str = "gvio-params";
pub const VERSION: u32 = 1;
/// Row-block order of stacked LSTM gate weights.
pub const GATE_ORDER: &str = "i,f,g,o";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsManifest {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    pub byte_order: String,
    pub gate_order: String,
    pub total_len: usize,
    pub crc32: u32,
    pub entries: Vec<ParamEntry>,
}

/// Serializes a store into its manifest and data bytes.
pub fn write_params(store: &ParamStore) -> (ParamsManifest, Vec<u8>) {
    let mut bytes = Vec::with_capacity(store.num_scalars() * 8);
    let mut entries = Vec::with_capacity(store.len());
    let mut offset = 0;
    for id in store.ids() {
        let t = store.get(id);
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        entries.push(ParamEntry { name: store.name(id).to_string(), shape: t.shape().to_vec(), offset, len: t.numel() });
        offset += t.numel();
    }
    let manifest = ParamsManifest {
        format: FORMAT.into(),
        version: VERSION,
        dtype: "f64".into(),
        byte_order: "little-endian".into(),
        gate_order: GATE_ORDER.into(),
        total_len: offset,
        crc32: crc32fast::hash(&bytes),
        entries,
    };
    (manifest, bytes)
}

/// Rebuilds a store from a manifest and its data bytes.
pub fn read_params(manifest: &ParamsManifest, bytes: &[u8]) -> Result<ParamStore, NnError> {
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(NnError::Manifest(format!(
            "unsupported format {} v{} (expected {FORMAT} v{VERSION})",
            manifest.format, manifest.version
        )));
    }
    if manifest.gate_order != GATE_ORDER {
        return Err(NnError::Manifest(format!("gate order {} (expected {GATE_ORDER})", manifest.gate_order)));
    }
    if bytes.len() != manifest.total_len * 8 {
        return Err(NnError::Manifest(format!(
            "data holds {} bytes, manifest declares {} values",
            bytes.len(),
            manifest.total_len
        )));
    }
    let found = crc32fast::hash(bytes);
    if found != manifest.crc32 {
        return Err(NnError::Checksum { expected: manifest.crc32, found });
    }
    let mut store = ParamStore::new();
    for e in &manifest.entries {
        let end = e.offset.checked_add(e.len).filter(|&end| end <= manifest.total_len);
        let Some(end) = end else {
            return Err(NnError::Manifest(format!("entry {} overruns the data", e.name)));
        };
        let data = bytes[e.offset * 8..end * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let t = Tensor::new(&e.shape, data).map_err(|err| NnError::Manifest(format!("entry {}: {err}", e.name)))?;
        store.add(e.name.clone(), t);
    }
    Ok(store)
}

/// Writes `{stem}.json` and `{stem}.bin` under `dir`.
pub fn save_params(store: &ParamStore, dir: &Path, stem: &str) -> Result<(), NnError> {
    let (manifest, bytes) = write_params(store);
    fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| NnError::Manifest(e.to_string()))?;
    fs::write(dir.join(format!("{stem}.json")), json)?;
    fs::write(dir.join(format!("{stem}.bin")), bytes)?;
    Ok(())
}

pub fn load_params(dir: &Path, stem: &str) -> Result<ParamStore, NnError> {
    let json = fs::read_to_string(dir.join(format!("{stem}.json")))?;
    let manifest: ParamsManifest = serde_json::from_str(&json).map_err(|e| NnError::Manifest(e.to_string()))?;
    let bytes = fs::read(dir.join(format!("{stem}.bin")))?;
    read_params(&manifest, &bytes)
}
