//! Checkpoint directory: `manifest.json` plus `params.bin`, the parameters as
//! one flat little-endian f64 blob in store order.

use super::{Ablation, CaenModel, ModelConfig, Vocab};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::Path;

pub const CHECKPOINT_FORMAT: u32 = 1;
const MANIFEST: &str = "manifest.json";
const BLOB: &str = "params.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into `params.bin`.
    pub offset: usize,
    pub dtype: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub ablation: Ablation,
    pub model: ModelConfig,
    pub vocab: Vocab,
    pub step: u64,
    /// Training configuration the checkpoint was produced with.
    pub config: serde_json::Value,
    pub params: Vec<ParamEntry>,
    /// SHA-256 of `params.bin`, lowercase hex.
    pub checksum: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save_checkpoint(
    dir: &Path,
    model: &CaenModel,
    step: u64,
    config: serde_json::Value,
) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blob = Vec::with_capacity(model.params.num_scalars() * 8);
    let mut params = Vec::with_capacity(model.params.len());
    for id in model.params.ids() {
        let t = model.params.get(id);
        params.push(ParamEntry {
            name: model.params.name(id).to_string(),
            shape: t.shape().to_vec(),
            offset: blob.len(),
            dtype: "f64le".into(),
        });
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_FORMAT,
        ablation: model.ablation,
        model: model.config.clone(),
        vocab: model.vocab,
        step,
        config,
        params,
        checksum: hex(&Sha256::digest(&blob)),
    };
    let blob_path = dir.join(BLOB);
    fs::write(&blob_path, &blob).map_err(|e| Error::io(&blob_path, e))?;
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Data(e.to_string()))?;
    let manifest_path = dir.join(MANIFEST);
    fs::write(&manifest_path, text + "\n").map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<(CaenModel, CheckpointManifest)> {
    let manifest_path = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: manifest_path.clone(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    if manifest.format_version != CHECKPOINT_FORMAT {
        return Err(Error::Data(format!(
            "unsupported checkpoint format {}",
            manifest.format_version
        )));
    }
    let blob_path = dir.join(BLOB);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    if hex(&Sha256::digest(&blob)) != manifest.checksum {
        return Err(Error::Data(format!(
            "{} does not match its checksum",
            blob_path.display()
        )));
    }

    let mut model = CaenModel::new(manifest.model.clone(), manifest.vocab, manifest.ablation, 0)?;
    if model.params.len() != manifest.params.len() {
        return Err(Error::Data(format!(
            "checkpoint has {} parameters, model expects {}",
            manifest.params.len(),
            model.params.len()
        )));
    }
    let mut values = Vec::with_capacity(manifest.params.len());
    for (id, entry) in model.params.ids().zip(&manifest.params) {
        let expected = model.params.get(id);
        if entry.name != model.params.name(id)
            || entry.shape != expected.shape()
            || entry.dtype != "f64le"
        {
            return Err(Error::Data(format!(
                "checkpoint entry {} {:?} does not match parameter {} {:?}",
                entry.name,
                entry.shape,
                model.params.name(id),
                expected.shape()
            )));
        }
        let n: usize = entry.shape.iter().product();
        let bytes = blob
            .get(entry.offset..entry.offset + n * 8)
            .ok_or_else(|| Error::Data(format!("parameter {} runs past the blob", entry.name)))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        values.push(Tensor::new(entry.shape.clone(), data)?);
    }
    model.params.set_values(values)?;
    Ok((model, manifest))
}
