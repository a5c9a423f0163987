//! Run manifest: what was run, with which settings, on which inputs, and
//! what it produced.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use hrssr::{Error, Result};

pub const FILE_NAME: &str = "run_manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    Completed,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: String,
    pub status: Status,
    pub error: Option<String>,
    pub deterministic: bool,
    pub seeds: BTreeMap<String, u64>,
    /// Effective configuration as TOML.
    pub config: String,
    /// SHA-256 of input and output checkpoint files.
    pub checkpoint_hashes: BTreeMap<String, String>,
    /// Perceptual metric backend and reference encoder mode.
    pub backends: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, PathBuf>,
    pub artifacts: Vec<PathBuf>,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

/// Writes through a temporary file in the same directory and renames it
/// into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    ));
    let mut f = std::fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

impl RunManifest {
    pub fn new(command: &str, argv: Vec<String>, config: String, deterministic: bool) -> Self {
        Self {
            command: command.to_string(),
            argv,
            version: env!("CARGO_PKG_VERSION").to_string(),
            status: Status::Running,
            error: None,
            deterministic,
            seeds: BTreeMap::new(),
            config,
            checkpoint_hashes: BTreeMap::new(),
            backends: BTreeMap::new(),
            inputs: BTreeMap::new(),
            artifacts: Vec::new(),
            started_unix: now(),
            finished_unix: None,
        }
    }

    pub fn hash_checkpoint(&mut self, key: &str, path: &Path) -> Result<()> {
        self.checkpoint_hashes.insert(key.to_string(), file_sha256(path)?);
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Invalid(e.to_string()))?;
        write_atomic(&dir.join(FILE_NAME), json.as_bytes())
    }

    pub fn finish(&mut self, dir: &Path, outcome: std::result::Result<(), String>) -> Result<()> {
        self.finished_unix = Some(now());
        match outcome {
            Ok(()) => self.status = Status::Completed,
            Err(e) => {
                self.status = Status::Failed;
                self.error = Some(e);
            }
        }
        self.write(dir)
    }

    #[cfg(test)]
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(FILE_NAME);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::Io { path, source: e })?;
        serde_json::from_str(&text).map_err(|e| Error::Invalid(e.to_string()))
    }
}
