use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> std::io::Result<Self> {
        let bytes = std::fs::read(path)?;
        Ok(FileDigest {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

/// Everything needed to re-run a command: arguments, the resolved
/// configuration and digests of every file read or written.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub resolved_config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub tool_version: String,
    pub timestamp: String,
}

impl RunManifest {
    pub fn new(command: &str, resolved_config: serde_json::Value) -> Self {
        RunManifest {
            command: command.to_string(),
            args: std::env::args().collect(),
            resolved_config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339(),
        }
    }

    /// Digests the given files and writes the manifest next to `primary`.
    pub fn finish(mut self, inputs: &[PathBuf], outputs: &[PathBuf], primary: &Path) -> std::io::Result<PathBuf> {
        self.inputs = inputs.iter().map(|p| FileDigest::of(p)).collect::<std::io::Result<_>>()?;
        self.outputs = outputs.iter().map(|p| FileDigest::of(p)).collect::<std::io::Result<_>>()?;
        let path = manifest_path(primary);
        let text = serde_json::to_string_pretty(&self).map_err(std::io::Error::other)?;
        std::fs::write(&path, text + "\n")?;
        Ok(path)
    }
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}
