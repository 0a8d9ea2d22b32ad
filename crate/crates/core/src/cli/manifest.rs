use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::Result;

/// Written as `manifest.json` next to every run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    /// Content hash over the resolved config and every input file.
    pub input_hash: String,
    pub seed: u64,
    pub artifacts: Vec<String>,
    pub started_at: String,
    pub finished_at: String,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?)
    }
}

pub(crate) fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}

fn files_under(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)?.filter_map(|e| e.ok()).map(|e| e.path()).collect();
        entries.sort();
        for e in entries {
            files_under(&e, out)?;
        }
    } else if path.is_file() {
        out.push(path.to_path_buf());
    }
    Ok(())
}

/// Git-style hash: every input is hashed as `blob <len>\0<bytes>`, and the
/// run hash covers the config followed by `<relative path> <blob hash>` lines
/// in sorted order. Directories contribute all files beneath them.
pub fn hash_inputs(config: &Value, inputs: &[&Path]) -> Result<String> {
    let blob = |bytes: &[u8]| {
        let mut h = Sha256::new();
        h.update(format!("blob {}\0", bytes.len()).as_bytes());
        h.update(bytes);
        hex::encode(h.finalize())
    };
    let mut tree = Sha256::new();
    tree.update(blob(serde_json::to_string(config)?.as_bytes()).as_bytes());
    tree.update(b"\n");
    for root in inputs {
        let mut files = Vec::new();
        files_under(root, &mut files)?;
        for f in files {
            let rel = f.strip_prefix(root).unwrap_or(&f);
            let name = if rel.as_os_str().is_empty() {
                f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
            } else {
                rel.to_string_lossy().into_owned()
            };
            tree.update(format!("{name} {}\n", blob(&std::fs::read(&f)?)).as_bytes());
        }
    }
    Ok(hex::encode(tree.finalize()))
}
