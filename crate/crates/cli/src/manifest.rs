//! Run manifests: enough to repeat a command bit-identically.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: PathBuf,
    /// Digest of the parsed motion features.
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub inputs: Vec<InputRecord>,
    pub seeds: Vec<u64>,
    pub tool_version: String,
    pub started_unix_ms: u128,
    pub wall_seconds: f64,
    pub outputs: Vec<PathBuf>,
    /// Command-specific details (IK settings and report, metrics, ...).
    pub details: serde_json::Value,
}

/// Collects manifest fields while a command runs.
pub struct ManifestBuilder {
    manifest: RunManifest,
    clock: Instant,
}

impl ManifestBuilder {
    pub fn start(command: &str) -> Self {
        let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis());
        Self {
            manifest: RunManifest {
                command: command.to_string(),
                args: std::env::args().collect(),
                config: serde_json::Value::Null,
                inputs: Vec::new(),
                seeds: Vec::new(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                started_unix_ms: started,
                wall_seconds: 0.0,
                outputs: Vec::new(),
                details: serde_json::Value::Null,
            },
            clock: Instant::now(),
        }
    }

    pub fn config(&mut self, config: &impl Serialize) -> &mut Self {
        self.manifest.config = serde_json::to_value(config).unwrap_or(serde_json::Value::Null);
        self
    }

    pub fn input(&mut self, path: &Path, fingerprint: String) -> &mut Self {
        self.manifest.inputs.push(InputRecord {
            path: path.to_path_buf(),
            fingerprint,
        });
        self
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.manifest.seeds.push(seed);
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.manifest.outputs.push(path.to_path_buf());
        self
    }

    pub fn details(&mut self, details: serde_json::Value) -> &mut Self {
        self.manifest.details = details;
        self
    }

    /// Stamps the wall time and writes the manifest atomically.
    pub fn finish(mut self, path: &Path) -> anyhow::Result<RunManifest> {
        self.manifest.wall_seconds = self.clock.elapsed().as_secs_f64();
        write_atomic(path, &serde_json::to_vec_pretty(&self.manifest)?)?;
        Ok(self.manifest)
    }
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming onto {}", path.display()))?;
    Ok(())
}
