//! Checkpoint directories: `manifest.json` plus raw little-endian weights.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ConditionSource, Mode, ModelBundle, ModelConfig};
use crate::imaging::{Palette, PyramidLadder, PyramidSpec};
use crate::nn::{from_le_bytes, to_le_bytes};
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT: &str = "augurone-checkpoint";
const MANIFEST: &str = "manifest.json";
const WEIGHTS: &str = "weights.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub mode: Mode,
    pub condition: ConditionSource,
    pub model: ModelConfig,
    pub pyramid: PyramidSpec,
    pub ladder: PyramidLadder,
    pub palette: Option<Palette>,
    pub train_config: Option<serde_json::Value>,
    /// SHA-256 of the compact JSON encoding of `train_config`.
    pub train_config_hash: Option<String>,
    pub params: Vec<ParamEntry>,
    pub weights_file: String,
    pub weights_sha256: String,
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Hash of a configuration snapshot as stored in manifests.
pub fn config_hash(value: &serde_json::Value) -> String {
    sha256_hex(value.to_string().as_bytes())
}

fn ckpt_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Writes `bundle` into directory `dir` (created if needed).
pub fn save_checkpoint(bundle: &ModelBundle, dir: impl AsRef<Path>) -> Result<CheckpointManifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| ckpt_err(dir, e.to_string()))?;
    let bytes = to_le_bytes(bundle.params.iter().map(|(_, _, t)| t));
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        version: CHECKPOINT_VERSION,
        mode: bundle.mode(),
        condition: bundle.condition,
        model: bundle.config,
        pyramid: bundle.pyramid,
        ladder: bundle.ladder.clone(),
        palette: bundle.palette.clone(),
        train_config_hash: bundle.train_config.as_ref().map(config_hash),
        train_config: bundle.train_config.clone(),
        params: bundle
            .params
            .iter()
            .map(|(_, n, t)| ParamEntry {
                name: n.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        weights_file: WEIGHTS.into(),
        weights_sha256: sha256_hex(&bytes),
    };
    let weights_path = dir.join(WEIGHTS);
    std::fs::write(&weights_path, &bytes).map_err(|e| ckpt_err(&weights_path, e.to_string()))?;
    let manifest_path = dir.join(MANIFEST);
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)
        .map_err(|e| ckpt_err(&manifest_path, e.to_string()))?;
    Ok(manifest)
}

/// Reads the manifest of a checkpoint directory, checking format and version.
pub fn read_manifest(dir: impl AsRef<Path>) -> Result<CheckpointManifest> {
    let path = dir.as_ref().join(MANIFEST);
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let text = std::fs::read_to_string(&path)?;
    let m: CheckpointManifest = serde_json::from_str(&text)
        .map_err(|e| ckpt_err(&path, format!("unreadable manifest: {e}")))?;
    if m.format != FORMAT {
        return Err(ckpt_err(&path, format!("unknown format {:?}", m.format)));
    }
    if m.version != CHECKPOINT_VERSION {
        return Err(ckpt_err(
            &path,
            format!("manifest version {} is not supported (expected {CHECKPOINT_VERSION})", m.version),
        ));
    }
    Ok(m)
}

/// Rebuilds a bundle from a checkpoint directory alone.
pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<ModelBundle> {
    let dir = dir.as_ref();
    let m = read_manifest(dir)?;
    let manifest_path = dir.join(MANIFEST);
    if let (Some(cfg), Some(hash)) = (&m.train_config, &m.train_config_hash) {
        let actual = config_hash(cfg);
        if &actual != hash {
            return Err(ckpt_err(
                &manifest_path,
                format!("training config hash mismatch: manifest says {hash}, contents hash to {actual}"),
            ));
        }
    }
    if m.condition.mode() != m.mode {
        return Err(ckpt_err(
            &manifest_path,
            format!("mode {} is inconsistent with condition source {:?}", m.mode, m.condition),
        ));
    }
    let mut bundle = ModelBundle::new(m.model, m.ladder.clone(), m.pyramid, m.condition, 0)?;
    let layout: Vec<ParamEntry> = bundle
        .params
        .iter()
        .map(|(_, n, t)| ParamEntry {
            name: n.to_string(),
            shape: t.shape().to_vec(),
        })
        .collect();
    if layout != m.params {
        return Err(ckpt_err(
            &manifest_path,
            "parameter names or shapes do not match the declared architecture",
        ));
    }
    let weights_path = dir.join(&m.weights_file);
    if !weights_path.exists() {
        return Err(Error::MissingFile(weights_path));
    }
    let bytes = std::fs::read(&weights_path)?;
    let actual = sha256_hex(&bytes);
    if actual != m.weights_sha256 {
        return Err(ckpt_err(
            &weights_path,
            format!("weights hash mismatch: manifest says {}, file hashes to {actual}", m.weights_sha256),
        ));
    }
    let shapes: Vec<Vec<usize>> = layout.into_iter().map(|p| p.shape).collect();
    let tensors = from_le_bytes(&bytes, &shapes)
        .ok_or_else(|| ckpt_err(&weights_path, "weights file size does not match the layout"))?;
    let ids: Vec<_> = bundle.params.ids().collect();
    for (id, t) in ids.into_iter().zip(tensors) {
        *bundle.params.get_mut(id) = t;
    }
    bundle.palette = m.palette;
    bundle.train_config = m.train_config;
    Ok(bundle)
}
