use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

/// Written beside the primary output as `<output>.manifest.json`.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub results: serde_json::Value,
    pub timing: Timing,
    pub tool_version: String,
}

#[derive(Debug, Serialize)]
pub struct Timing {
    pub started_unix_s: u64,
    pub elapsed_ms: f64,
}

pub fn sha256_file(path: &Path) -> Result<FileHash> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(FileHash {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

pub struct Recorder {
    command: &'static str,
    started: Instant,
    started_unix_s: u64,
    inputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn start(command: &'static str) -> Self {
        Self {
            command,
            started: Instant::now(),
            started_unix_s: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            inputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    /// Hashes inputs and outputs and writes the manifest beside `outputs[0]`.
    pub fn finish(
        self,
        config: serde_json::Value,
        outputs: &[&Path],
        results: serde_json::Value,
    ) -> Result<PathBuf> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            argv: std::env::args().collect(),
            config,
            inputs: self
                .inputs
                .iter()
                .map(|p| sha256_file(p))
                .collect::<Result<_>>()?,
            outputs: outputs
                .iter()
                .map(|p| sha256_file(p))
                .collect::<Result<_>>()?,
            results,
            timing: Timing {
                started_unix_s: self.started_unix_s,
                elapsed_ms: self.started.elapsed().as_secs_f64() * 1e3,
            },
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        };
        let path = manifest_path(outputs[0]);
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}
