use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    /// `computed`, `loaded`, `failed` or `invalid`.
    pub status: String,
    pub seconds: f64,
    pub error: Option<String>,
    pub message: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
    pub files: Vec<FileRecord>,
}

impl RunManifest {
    pub fn new(command: &str, config_hash: String, seed: u64) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_hash,
            seed,
            ..Default::default()
        }
    }

    pub fn note_file(&mut self, name: &str) {
        if !self.files.iter().any(|f| f.path == name) {
            self.files.push(FileRecord { path: name.into(), bytes: 0 });
        }
    }

    /// Fill in byte lengths and write `manifest.json` into `dir`.
    pub fn write(&mut self, dir: &Path) -> std::io::Result<()> {
        for f in &mut self.files {
            f.bytes = std::fs::metadata(dir.join(&f.path))?.len();
        }
        std::fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(dir.join("manifest.json"), text)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}
