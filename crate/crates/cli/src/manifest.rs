//! Run manifest written into every output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use lamosim::util::{config_hash, sha256_hex};
use serde::Serialize;
use serde_json::Value;

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Records what produced a directory. Holds no worker counts and, unless
/// asked for, no wall time, so equal inputs give a byte-identical file.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub params: BTreeMap<String, Value>,
    pub config_hashes: BTreeMap<String, String>,
    /// File name to SHA-256 of its contents.
    pub outputs: BTreeMap<String, String>,
    pub summary: BTreeMap<String, Value>,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

impl RunManifest {
    pub fn new(command: &str, seed: Option<u64>) -> Self {
        RunManifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            params: BTreeMap::new(),
            config_hashes: BTreeMap::new(),
            outputs: BTreeMap::new(),
            summary: BTreeMap::new(),
            status: "ok".into(),
            wall_time_s: None,
        }
    }

    pub fn param(&mut self, k: &str, v: impl Serialize) {
        self.params
            .insert(k.into(), serde_json::to_value(v).expect("serializable"));
    }

    pub fn config<T: Serialize>(&mut self, k: &str, v: &T) {
        self.config_hashes.insert(k.into(), config_hash(v));
    }

    pub fn note(&mut self, k: &str, v: impl Serialize) {
        self.summary
            .insert(k.into(), serde_json::to_value(v).expect("serializable"));
    }
}

/// Output directory that tracks every file written into it.
pub struct OutDir {
    pub root: PathBuf,
    pub manifest: RunManifest,
}

impl OutDir {
    pub fn create(root: &Path, manifest: RunManifest) -> Result<Self, CliError> {
        std::fs::create_dir_all(root)
            .map_err(|e| CliError::Usage(format!("cannot create `{}`: {e}", root.display())))?;
        Ok(OutDir {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Hashes a file already written at `name`.
    pub fn record(&mut self, name: &str) -> Result<(), CliError> {
        let p = self.path(name);
        let bytes = std::fs::read(&p)
            .map_err(|e| CliError::Internal(format!("cannot read back `{}`: {e}", p.display())))?;
        self.manifest
            .outputs
            .insert(name.into(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(v).expect("serializable");
        text.push('\n');
        std::fs::write(self.path(name), text)
            .map_err(|e| CliError::Internal(format!("cannot write `{name}`: {e}")))?;
        self.record(name)
    }

    pub fn finish(mut self, wall_time_s: Option<f64>) -> Result<(), CliError> {
        self.manifest.wall_time_s = wall_time_s;
        let mut text = serde_json::to_string_pretty(&self.manifest).expect("serializable");
        text.push('\n');
        std::fs::write(self.path(MANIFEST_FILE), text)
            .map_err(|e| CliError::Internal(format!("cannot write manifest: {e}")))
    }
}
