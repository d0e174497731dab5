use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use selfex::store::{RunManifest, MANIFEST_FILE};

use crate::config::RunConfig;

pub const CONFIG_FILE: &str = "config.toml";

/// A per-run output directory and the manifest describing it.
#[derive(Debug)]
pub struct RunDir {
    pub id: String,
    pub path: PathBuf,
    pub manifest: RunManifest,
}

fn create_unique(out: &Path, base: &str) -> anyhow::Result<(String, PathBuf)> {
    for i in 0.. {
        let id = if i == 0 { base.to_string() } else { format!("{base}-{i}") };
        let path = out.join(&id);
        match std::fs::create_dir(&path) {
            Ok(()) => return Ok((id, path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e).with_context(|| format!("creating {}", path.display())),
        }
    }
    unreachable!()
}

impl RunDir {
    /// Creates `out/<run_id>` and echoes the configuration into it. Without an
    /// explicit id one is derived from the command and the clock; an explicit
    /// id must not exist yet.
    pub fn create(out: &Path, command: &str, run_id: Option<&str>, cfg: &RunConfig) -> anyhow::Result<Self> {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let (id, path) = match run_id {
            Some(id) => {
                let path = out.join(id);
                std::fs::create_dir(&path).with_context(|| format!("creating run directory {}", path.display()))?;
                (id.to_string(), path)
            }
            None => {
                let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
                create_unique(out, &format!("{command}-{secs}"))?
            }
        };
        std::fs::write(path.join(CONFIG_FILE), cfg.to_toml()?)?;
        let mut manifest = RunManifest::new(&id, command, cfg.sim.clone());
        manifest.add_artifact("config", CONFIG_FILE)?;
        Ok(Self { id, path, manifest })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// Registers an artifact that has just been written.
    pub fn record(&mut self, name: &str, file: &str) -> anyhow::Result<PathBuf> {
        self.manifest.add_artifact(name, file)?;
        Ok(self.file(file))
    }

    pub fn input(&mut self, name: &str, path: &Path) -> anyhow::Result<()> {
        let abs = std::fs::canonicalize(path).with_context(|| format!("resolving {}", path.display()))?;
        self.manifest.add_input(name, &abs)?;
        Ok(())
    }

    /// Runs `body`, then seals the manifest. A failure is recorded in the
    /// manifest before being returned.
    pub fn finish<T>(mut self, body: impl FnOnce(&mut Self) -> anyhow::Result<T>) -> anyhow::Result<T> {
        let result = body(&mut self);
        if let Err(e) = &result {
            self.manifest.set_result("error", format!("{e:#}"))?;
            // Keep only artifacts that made it to disk.
            let dir = self.path.clone();
            self.manifest.artifacts.retain(|_, rel| dir.join(rel.as_str()).exists());
        }
        self.manifest
            .seal(&self.path)
            .with_context(|| format!("sealing {}", self.path.join(MANIFEST_FILE).display()))?;
        result
    }
}

/// Loads a sealed run: its manifest and configuration echo.
pub fn load_run(manifest_path: &Path) -> anyhow::Result<(RunManifest, RunConfig, PathBuf)> {
    let manifest = RunManifest::load(manifest_path)?;
    anyhow::ensure!(manifest.is_sealed(), "{} is not sealed", manifest_path.display());
    let dir = manifest_path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    let cfg_path = manifest
        .artifact_path(&dir, "config")
        .context("manifest lists no configuration")?;
    let cfg = RunConfig::load(&cfg_path)?;
    Ok((manifest, cfg, dir))
}
