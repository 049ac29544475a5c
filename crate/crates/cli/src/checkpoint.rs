//! Model checkpoints: a `manifest.json` describing the architecture and the
//! tensor layout, plus `params.bin` holding every parameter as little-endian
//! `f64` in manifest order.

use std::fs;
use std::path::Path;

use senn_core::model::{Architecture, SennModel};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, IoContext, Result};

pub const FORMAT_VERSION: u64 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format_version: u64,
    pub architecture: Architecture,
    pub config_hash: String,
    pub seed: u64,
    pub dataset: String,
    pub tensors: Vec<TensorEntry>,
}

/// Provenance stored alongside the parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub seed: u64,
    pub dataset: String,
}

pub fn save_checkpoint(model: &SennModel, dir: &Path, meta: &CheckpointMeta) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir).at(dir)?;
    let named = model.named_parameters();
    let manifest = CheckpointManifest {
        format_version: FORMAT_VERSION,
        architecture: model.architecture(),
        config_hash: meta.config_hash.clone(),
        seed: meta.seed,
        dataset: meta.dataset.clone(),
        tensors: named.iter().map(|(name, t)| TensorEntry { name: name.clone(), shape: t.shape().to_vec() }).collect(),
    };
    let mut blob = Vec::with_capacity(named.iter().map(|(_, t)| t.len() * 8).sum());
    for (_, t) in &named {
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest_path = dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, serde_json::to_vec_pretty(&manifest)?).at(&manifest_path)?;
    let params_path = dir.join(PARAMS_FILE);
    fs::write(&params_path, blob).at(&params_path)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST_FILE);
    let raw: serde_json::Value = serde_json::from_slice(&fs::read(&path).at(&path)?)?;
    // Checked before the full parse so that other layouts report the version.
    let found = raw
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| CliError::Config { path: path.clone(), message: "missing format_version".into() })?;
    if found != FORMAT_VERSION {
        return Err(CliError::VersionMismatch { found, expected: FORMAT_VERSION });
    }
    Ok(serde_json::from_value(raw)?)
}

pub fn load_checkpoint(dir: &Path) -> Result<(SennModel, CheckpointManifest)> {
    let manifest = read_manifest(dir)?;
    let mut model = SennModel::init(&manifest.architecture, 0)?;

    let expected: Vec<(String, Vec<usize>)> =
        model.named_parameters().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
    if expected.len() != manifest.tensors.len() {
        let missing = |i: usize, list: &[String]| list.get(i).cloned().unwrap_or_else(|| "<none>".into());
        let a: Vec<String> = expected.iter().map(|(n, _)| n.clone()).collect();
        let b: Vec<String> = manifest.tensors.iter().map(|t| t.name.clone()).collect();
        let i = a.iter().zip(&b).take_while(|(x, y)| x == y).count();
        return Err(CliError::TensorName { expected: missing(i, &a), found: missing(i, &b) });
    }
    for ((name, shape), entry) in expected.iter().zip(&manifest.tensors) {
        if *name != entry.name {
            return Err(CliError::TensorName { expected: name.clone(), found: entry.name.clone() });
        }
        if *shape != entry.shape {
            return Err(CliError::ShapeMismatch { tensor: name.clone(), expected: shape.clone(), found: entry.shape.clone() });
        }
    }

    let path = dir.join(PARAMS_FILE);
    let blob = fs::read(&path).at(&path)?;
    let want: usize = expected.iter().map(|(_, s)| s.iter().product::<usize>() * 8).sum();
    if blob.len() < want {
        return Err(CliError::Truncated { expected: want, found: blob.len() });
    }
    if blob.len() > want {
        return Err(CliError::TrailingBytes { extra: blob.len() - want });
    }
    let mut words = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunks of eight")));
    for t in model.parameters_mut() {
        for v in t.data_mut() {
            *v = words.next().expect("length checked above");
        }
    }
    Ok((model, manifest))
}
