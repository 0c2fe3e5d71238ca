//! Atomic file writes and digesting.
//!
//! Every artifact lands via temp file + rename so a crash never leaves a
//! half-written output, and reruns replace files in one step.

use std::fs;
use std::path::{Path, PathBuf};

use cropseries_core::digest::Fnv1a;

use crate::error::{io_at, CliError};

/// Write `bytes` to `path` atomically (same-directory temp, then rename).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir).map_err(|e| io_at(dir, e))?;
    }
    let mut tmp: PathBuf = path.to_path_buf();
    let name = path
        .file_name()
        .ok_or_else(|| CliError::io(format!("{}: not a file path", path.display())))?;
    tmp.set_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes).map_err(|e| io_at(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_at(path, e))?;
    Ok(())
}

pub fn read_to_string(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| io_at(path, e))
}

/// FNV-1a digest of a file's bytes, for manifests.
pub fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| io_at(path, e))?;
    let mut h = Fnv1a::new();
    h.update(&bytes);
    Ok(h.finish_hex())
}

/// FNV-1a digest of an in-memory byte string.
pub fn bytes_digest(bytes: &[u8]) -> String {
    let mut h = Fnv1a::new();
    h.update(bytes);
    h.finish_hex()
}
