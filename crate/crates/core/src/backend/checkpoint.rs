//! Checkpoint directories: `manifest.json` plus one little-endian `f32` file
//! per parameter array.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamSet, Tensor};

const FORMAT: &str = "fsner-checkpoint-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format: String,
    backend: String,
    config: BTreeMap<String, serde_json::Value>,
    params: Vec<ParamEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub backend: String,
    /// Scalar backend configuration.
    pub config: BTreeMap<String, serde_json::Value>,
    pub params: ParamSet,
}

/// Writes `ckpt` into `dir`, creating it if needed. Values are stored as
/// `f32`, so a save/load cycle rounds `f64` parameters to single precision;
/// saving a loaded checkpoint reproduces the files byte for byte.
pub fn save_checkpoint(dir: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(ckpt.params.len());
    for (name, t) in ckpt.params.iter() {
        let file = format!("{name}.f32");
        let mut bytes = Vec::with_capacity(t.len() * 4);
        for &x in &t.data {
            bytes.extend_from_slice(&(x as f32).to_le_bytes());
        }
        fs::write(dir.join(&file), bytes)?;
        entries.push(ParamEntry { name: name.clone(), shape: t.shape.clone(), file });
    }
    let manifest = Manifest {
        format: FORMAT.to_string(),
        backend: ckpt.backend.clone(),
        config: ckpt.config.clone(),
        params: entries,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.format != FORMAT {
        return Err(Error::Checkpoint(format!("unknown format `{}`", manifest.format)));
    }
    let mut params = ParamSet::new();
    for e in manifest.params {
        if e.file.contains('/') || e.file.contains('\\') {
            return Err(Error::Checkpoint(format!("parameter file `{}` must be a plain name", e.file)));
        }
        let bytes = fs::read(dir.join(&e.file))?;
        if bytes.len() % 4 != 0 {
            return Err(Error::Checkpoint(format!("`{}` is not a whole number of f32 values", e.file)));
        }
        let data: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let t = Tensor::new(e.shape, data).map_err(|err| Error::Checkpoint(format!("`{}`: {err}", e.name)))?;
        params.insert(e.name, t);
    }
    Ok(Checkpoint { backend: manifest.backend, config: manifest.config, params })
}
