//! Checkpoint directories: `manifest.json` plus `tensors.bin` (little-endian
//! f32, concatenated in manifest order). Writes go to a temporary sibling
//! directory that is renamed into place.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelState, ParamKind, Tensor};
use crate::error::{Error, Result};

/// Enough to regenerate every random stream of a run from this point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub epoch: usize,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    kind: ParamKind,
    offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
    global_step: u64,
    rng_state: RngState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointMeta {
    pub global_step: u64,
    pub rng_state: RngState,
}

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

impl ModelState<f32> {
    pub fn save(&self, dir: &Path, meta: CheckpointMeta) -> Result<()> {
        let mut entries = Vec::with_capacity(self.tensors().len());
        let mut blob = Vec::with_capacity(self.num_params() * 4);
        for t in self.tensors() {
            entries.push(TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                kind: t.kind,
                offset: blob.len(),
            });
            for v in &t.data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest {
            config: self.config().clone(),
            tensors: entries,
            global_step: meta.global_step,
            rng_state: meta.rng_state,
        };
        let name = dir
            .file_name()
            .ok_or_else(|| bad(dir, "checkpoint path has no final component"))?
            .to_string_lossy()
            .into_owned();
        let parent = dir.parent().unwrap_or_else(|| Path::new("."));
        fs::create_dir_all(parent)?;
        let tmp = parent.join(format!(".{name}.tmp-{}", std::process::id()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir_all(&tmp)?;
        fs::write(tmp.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
        let mut f = fs::File::create(tmp.join("tensors.bin"))?;
        f.write_all(&blob)?;
        f.sync_all()?;
        if dir.exists() {
            fs::remove_dir_all(dir)?;
        }
        fs::rename(&tmp, dir)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<(Self, CheckpointMeta)> {
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
        let blob = fs::read(dir.join("tensors.bin"))?;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in &manifest.tensors {
            let n: usize = e.shape.iter().product();
            let end = e.offset + 4 * n;
            if end > blob.len() {
                return Err(bad(dir, format!("tensor {} runs past end of tensors.bin", e.name)));
            }
            let data = blob[e.offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(Tensor {
                name: e.name.clone(),
                shape: e.shape.clone(),
                kind: e.kind,
                data,
            });
        }
        let state = ModelState::from_tensors(&manifest.config, tensors)?;
        Ok((
            state,
            CheckpointMeta {
                global_step: manifest.global_step,
                rng_state: manifest.rng_state,
            },
        ))
    }
}
