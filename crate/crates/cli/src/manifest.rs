use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use storex_core::config::Config;

use crate::{write_atomic, CliError};

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.json";

/// One produced file, relative to the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub command: String,
    pub created_unix: u64,
    #[serde(default)]
    pub params: serde_json::Value,
}

/// Root record of a run directory. Everything in it was produced from the
/// config stored next to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    /// Directory that relative series paths in the config resolve against.
    pub series_base: PathBuf,
    pub created_unix: u64,
    pub updated_unix: u64,
    pub artifacts: BTreeMap<String, Artifact>,
}

pub fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Missing(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    pub fn artifact_path(&self, dir: &Path, key: &str) -> Option<PathBuf> {
        self.artifacts.get(key).map(|a| dir.join(&a.path))
    }

    /// The stored config, checked against the recorded hash.
    pub fn config(&self, dir: &Path) -> Result<Config, CliError> {
        let path = dir.join(CONFIG);
        let config = storex_core::config::load_config(&path)?;
        if config.hash() != self.config_hash {
            return Err(CliError::Incompatible(format!(
                "{} does not match the manifest's config hash",
                path.display()
            )));
        }
        Ok(config)
    }
}

/// Output directory being written by one command.
pub struct RunDir {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

impl RunDir {
    /// Opens `dir` for `config`. An existing manifest for the same config is
    /// extended; one for a different config is replaced.
    pub fn open(dir: &Path, config: &Config, seed: u64, series_base: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Validation(format!("{}: {e}", dir.display())))?;
        let hash = config.hash();
        let manifest = match RunManifest::load(dir) {
            Ok(m) if m.config_hash == hash => m,
            _ => RunManifest {
                version: env!("CARGO_PKG_VERSION").to_string(),
                config_hash: hash,
                seed,
                series_base: series_base.to_path_buf(),
                created_unix: now(),
                updated_unix: now(),
                artifacts: BTreeMap::new(),
            },
        };
        write_atomic(&dir.join(CONFIG), config.to_json().as_bytes())?;
        Ok(RunDir {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn write(&mut self, key: &str, file: &str, bytes: &[u8], command: &str, params: serde_json::Value) -> Result<PathBuf, CliError> {
        let path = self.dir.join(file);
        write_atomic(&path, bytes)?;
        self.manifest.artifacts.insert(
            key.to_string(),
            Artifact {
                path: file.to_string(),
                command: command.to_string(),
                created_unix: now(),
                params,
            },
        );
        Ok(path)
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.manifest.updated_unix = now();
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        write_atomic(&self.dir.join(MANIFEST), text.as_bytes())
    }
}
