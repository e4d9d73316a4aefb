//! Output directories are assembled in a sibling temp dir and renamed into place,
//! so a failed run never leaves a partial directory behind.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Reads an input file and records its digest.
pub fn read_input(path: &Path, inputs: &mut Vec<FileDigest>) -> Result<Vec<u8>, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(&format!("reading {}", path.display()), e))?;
    inputs.push(FileDigest { path: path.display().to_string(), sha256: sha256_hex(&bytes) });
    Ok(bytes)
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Wall-clock seconds; the only field that differs between identical runs.
    pub duration_seconds: f64,
}

pub struct OutputDir {
    temp: TempDir,
    target: PathBuf,
    outputs: Vec<FileDigest>,
    started: Instant,
}

impl OutputDir {
    pub fn create(target: &Path, force: bool) -> Result<Self, CliError> {
        if target.exists() && !force {
            return Err(CliError::input(
                "output-exists",
                format!("{} already exists; pass --force to replace it", target.display()),
            ));
        }
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).map_err(|e| CliError::io(&format!("creating {}", parent.display()), e))?;
        let temp = tempfile::Builder::new()
            .prefix(".simplexsm-")
            .tempdir_in(&parent)
            .map_err(|e| CliError::io("creating temporary output directory", e))?;
        Ok(OutputDir { temp, target: target.to_path_buf(), outputs: Vec::new(), started: Instant::now() })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        fs::write(self.temp.path().join(name), bytes).map_err(|e| CliError::io(&format!("writing {name}"), e))?;
        self.outputs.push(FileDigest { path: name.to_string(), sha256: sha256_hex(bytes) });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_vec_pretty(value).map_err(|e| CliError::input("serialize", e.to_string()))?;
        text.push(b'\n');
        self.write(name, &text)
    }

    /// Writes through a buffer filled by `f`.
    pub fn write_with(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Vec<u8>) -> simplexsm::Result<()>,
    ) -> Result<(), CliError> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    /// Writes the manifest and moves the directory into place.
    pub fn commit<C: Serialize>(
        mut self,
        subcommand: &str,
        seed: Option<u64>,
        config: &C,
        inputs: Vec<FileDigest>,
    ) -> Result<PathBuf, CliError> {
        let manifest = RunManifest {
            subcommand: subcommand.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config: serde_json::to_value(config).map_err(|e| CliError::input("serialize", e.to_string()))?,
            inputs,
            outputs: std::mem::take(&mut self.outputs),
            duration_seconds: self.started.elapsed().as_secs_f64(),
        };
        let mut text = serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::input("serialize", e.to_string()))?;
        text.push(b'\n');
        fs::write(self.temp.path().join(MANIFEST), text).map_err(|e| CliError::io("writing manifest", e))?;
        if self.target.exists() {
            fs::remove_dir_all(&self.target)
                .map_err(|e| CliError::io(&format!("removing {}", self.target.display()), e))?;
        }
        let staged = self.temp.keep();
        fs::rename(&staged, &self.target).map_err(|e| {
            let _ = fs::remove_dir_all(&staged);
            CliError::io(&format!("moving output into {}", self.target.display()), e)
        })?;
        Ok(self.target)
    }
}
