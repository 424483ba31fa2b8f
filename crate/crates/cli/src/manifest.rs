//! Run manifests: enough to replay a command and check its inputs.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileHash {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
        Ok(Self { path: path.to_path_buf(), sha256: hex::encode(Sha256::digest(&bytes)) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub perturb: u64,
    pub split: u64,
    pub train: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub tool: String,
    pub version: String,
    pub command: String,
    pub timestamp_unix: u64,
    /// Config file contents as given, before overrides (null without a file).
    pub config_file: Value,
    /// Overrides in the order they were applied.
    pub overrides: Vec<(String, String)>,
    /// Fully resolved configuration; replay uses this alone.
    pub config: RunConfig,
    pub seeds: Seeds,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

impl Manifest {
    pub fn new(
        command: &str,
        config_file: Value,
        overrides: Vec<(String, String)>,
        config: &RunConfig,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
    ) -> Result<Self> {
        let timestamp_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        Ok(Self {
            manifest_version: MANIFEST_VERSION,
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            timestamp_unix,
            config_file,
            overrides,
            config: config.clone(),
            seeds: Seeds { perturb: config.perturb.seed, split: config.split.seed, train: config.train.seed },
            inputs: inputs.iter().map(|p| FileHash::of(p)).collect::<Result<_>>()?,
            outputs: outputs.iter().map(|p| FileHash::of(p)).collect::<Result<_>>()?,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        let m: Self = serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))?;
        if m.manifest_version != MANIFEST_VERSION {
            bail!("manifest version {} is not supported", m.manifest_version);
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).with_context(|| format!("writing manifest {}", path.display()))
    }

    /// Fails if any recorded input no longer has its recorded hash.
    pub fn check_inputs(&self) -> Result<()> {
        for f in &self.inputs {
            let now = FileHash::of(&f.path)?;
            if now.sha256 != f.sha256 {
                bail!("input {} changed since the manifest was written", f.path.display());
            }
        }
        Ok(())
    }
}
