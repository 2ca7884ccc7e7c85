//! Little-endian binary32 buffers and atomic file output.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CfxError, Result};

pub fn f32_to_le_bytes(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn f32_from_le_bytes(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect()
}

/// Reads a binary32 file that must hold exactly `expected_len` values.
pub fn read_f32_file(path: &Path, expected_len: usize) -> Result<Vec<f32>> {
    if !path.exists() {
        return Err(CfxError::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| CfxError::io(path, e))?;
    let expected = expected_len as u64 * 4;
    if bytes.len() as u64 != expected {
        return Err(CfxError::SizeMismatch {
            what: path.display().to_string(),
            expected,
            found: bytes.len() as u64,
        });
    }
    Ok(f32_from_le_bytes(&bytes))
}

/// Writes `bytes` to a temporary sibling and renames it over `path`, so a
/// reader never observes a partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| CfxError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CfxError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CfxError::io(path, e))?;
    tmp.as_file()
        .sync_all()
        .map_err(|e| CfxError::io(path, e))?;
    tmp.persist(path).map_err(|e| CfxError::io(path, e.error))?;
    Ok(())
}

pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CfxError::format("json output", e))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path, what: &'static str) -> Result<T> {
    if !path.exists() {
        return Err(CfxError::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| CfxError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CfxError::format(what, e))
}
