//! Run manifests: what a command read, wrote and how it was configured.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
}

fn io_err(path: &Path, source: io::Error) -> ManifestError {
    ManifestError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: String,
    /// Every setting needed to rerun the command.
    pub config: serde_json::Value,
    /// Input path to hex SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub outputs: Vec<String>,
    pub started: String,
    pub finished: String,
    pub seconds: f64,
    /// Named phase durations in seconds.
    pub timings: BTreeMap<String, f64>,
}

pub fn sha256_file(path: &Path) -> Result<String, ManifestError> {
    let mut f = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| io_err(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Collects a manifest while a command runs.
pub struct ManifestBuilder {
    manifest: RunManifest,
    start: Instant,
    phase: Option<(String, Instant)>,
}

impl ManifestBuilder {
    pub fn new(command: &str, argv: Vec<String>) -> Self {
        Self {
            manifest: RunManifest {
                command: command.to_string(),
                argv,
                version: env!("CARGO_PKG_VERSION").to_string(),
                config: serde_json::Value::Null,
                inputs: BTreeMap::new(),
                seed: None,
                outputs: Vec::new(),
                started: chrono::Utc::now().to_rfc3339(),
                finished: String::new(),
                seconds: 0.0,
                timings: BTreeMap::new(),
            },
            start: Instant::now(),
            phase: None,
        }
    }

    pub fn config<T: Serialize>(&mut self, config: &T) -> &mut Self {
        self.manifest.config = serde_json::to_value(config).unwrap_or(serde_json::Value::Null);
        self
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.manifest.seed = Some(seed);
        self
    }

    pub fn input(&mut self, path: &Path) -> Result<&mut Self, ManifestError> {
        let hash = sha256_file(path)?;
        self.manifest.inputs.insert(path.display().to_string(), hash);
        Ok(self)
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.manifest.outputs.push(path.display().to_string());
        self
    }

    /// Start timing a named phase, closing the previous one.
    pub fn phase(&mut self, name: &str) -> &mut Self {
        self.end_phase();
        self.phase = Some((name.to_string(), Instant::now()));
        self
    }

    fn end_phase(&mut self) {
        if let Some((name, t)) = self.phase.take() {
            *self.manifest.timings.entry(name).or_default() += t.elapsed().as_secs_f64();
        }
    }

    pub fn finish(mut self) -> RunManifest {
        self.end_phase();
        self.manifest.finished = chrono::Utc::now().to_rfc3339();
        self.manifest.seconds = self.start.elapsed().as_secs_f64();
        self.manifest
    }
}

impl RunManifest {
    /// Write via a temporary file and rename, so readers never see a
    /// partial manifest.
    pub fn write_atomic(&self, path: &Path) -> Result<(), ManifestError> {
        let json = serde_json::to_string_pretty(self).map_err(|e| ManifestError::Json {
            path: path.display().to_string(),
            source: e,
        })?;
        let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let tmp: PathBuf = dir.join(format!(
            ".{}.tmp{}",
            path.file_name().and_then(|n| n.to_str()).unwrap_or("manifest"),
            std::process::id()
        ));
        let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
        f.write_all(json.as_bytes()).map_err(|e| io_err(&tmp, e))?;
        f.write_all(b"\n").map_err(|e| io_err(&tmp, e))?;
        f.sync_all().map_err(|e| io_err(&tmp, e))?;
        drop(f);
        fs::rename(&tmp, path).map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let raw = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&raw).map_err(|e| ManifestError::Json { path: path.display().to_string(), source: e })
    }

    /// Inputs whose current content no longer matches the recorded hash,
    /// including inputs that have disappeared.
    pub fn tampered_inputs(&self) -> Vec<String> {
        self.inputs
            .iter()
            .filter(|(p, h)| sha256_file(Path::new(p)).map_or(true, |now| &now != *h))
            .map(|(p, _)| p.clone())
            .collect()
    }
}
