use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::env::SimConfig;
use crate::error::{Error, Result};
use crate::ppo::PpoConfig;

use super::{corrupt, write_atomic};

pub const MANIFEST_FILE: &str = "manifest.json";

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Record of one run: configuration echo, seeds, artifacts and results.
/// Artifact paths are relative to the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub code_version: String,
    pub created_unix: u64,
    pub sealed_unix: Option<u64>,
    pub seeds: BTreeMap<String, u64>,
    pub sim: SimConfig,
    pub ppo: Option<PpoConfig>,
    /// Files read by the run, as given on the command line.
    pub inputs: BTreeMap<String, String>,
    pub artifacts: BTreeMap<String, String>,
    pub results: BTreeMap<String, serde_json::Value>,
}

impl RunManifest {
    pub fn new(run_id: impl Into<String>, command: impl Into<String>, sim: SimConfig) -> Self {
        Self {
            run_id: run_id.into(),
            command: command.into(),
            code_version: env!("CARGO_PKG_VERSION").into(),
            created_unix: now(),
            sealed_unix: None,
            seeds: BTreeMap::new(),
            sim,
            ppo: None,
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            results: BTreeMap::new(),
        }
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed_unix.is_some()
    }

    fn mutable(&mut self) -> Result<&mut Self> {
        if self.is_sealed() {
            return Err(Error::InvalidArgument(format!("manifest {} is sealed", self.run_id)));
        }
        Ok(self)
    }

    pub fn set_ppo(&mut self, ppo: PpoConfig) -> Result<()> {
        self.mutable()?.ppo = Some(ppo);
        Ok(())
    }

    pub fn add_seed(&mut self, name: impl Into<String>, seed: u64) -> Result<()> {
        self.mutable()?.seeds.insert(name.into(), seed);
        Ok(())
    }

    pub fn add_input(&mut self, name: impl Into<String>, path: &Path) -> Result<()> {
        self.mutable()?.inputs.insert(name.into(), path.display().to_string());
        Ok(())
    }

    pub fn add_artifact(&mut self, name: impl Into<String>, relative: impl Into<String>) -> Result<()> {
        self.mutable()?.artifacts.insert(name.into(), relative.into());
        Ok(())
    }

    pub fn set_result(&mut self, key: impl Into<String>, value: impl Serialize) -> Result<()> {
        let v = serde_json::to_value(value)?;
        self.mutable()?.results.insert(key.into(), v);
        Ok(())
    }

    pub fn artifact_path(&self, dir: &Path, name: &str) -> Option<std::path::PathBuf> {
        self.artifacts.get(name).map(|rel| dir.join(rel))
    }

    /// Verifies every artifact exists under `dir`, freezes the manifest and
    /// writes it to `dir/manifest.json`.
    pub fn seal(&mut self, dir: &Path) -> Result<()> {
        self.mutable()?;
        for (name, rel) in &self.artifacts {
            if !dir.join(rel).exists() {
                return Err(Error::InvalidArgument(format!("artifact {name} missing at {rel}")));
            }
        }
        self.sealed_unix = Some(now());
        write_atomic(&dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| corrupt(path, e))
    }
}
