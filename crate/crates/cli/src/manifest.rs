//! Artifact manifest: every command lists what it wrote, with content
//! hashes, so identical configs are checkable byte for byte.

use crate::errors::{CliError, Result};
use serde::Serialize;
use std::path::{Path, PathBuf};

#[derive(Serialize)]
struct ManifestFile {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest {
    command: &'static str,
    seed: u64,
    files: Vec<ManifestFile>,
}

/// Hash `files` (paths relative to `dir`) and write `manifest.json` there.
pub fn write_manifest(
    dir: &Path,
    command: &'static str,
    seed: u64,
    files: &[PathBuf],
) -> Result<()> {
    let mut entries = Vec::with_capacity(files.len());
    for f in files {
        let absolute = dir.join(f);
        let bytes = std::fs::metadata(&absolute)
            .map_err(|e| CliError::Io(format!("stat {}: {e}", absolute.display())))?
            .len();
        let sha256 = sfml_core::io::file_sha256(&absolute)
            .map_err(|e| CliError::Io(format!("hash {}: {e}", absolute.display())))?;
        entries.push(ManifestFile {
            path: f.display().to_string(),
            bytes,
            sha256,
        });
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest {
        command,
        seed,
        files: entries,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::Other(format!("serialize manifest: {e}")))?;
    std::fs::write(dir.join("manifest.json"), json.as_bytes())
        .map_err(|e| CliError::Io(format!("write manifest: {e}")))?;
    Ok(())
}
