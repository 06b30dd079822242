//! Small file helpers shared by checkpoints and the on-disk formats.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{io_err, Error, Result};

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| Error::Json { path: path.into(), message: e.to_string() })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Json { path: path.into(), message: e.to_string() })
}

/// Little-endian IEEE-754 doubles, no header.
pub fn write_f64s(path: &Path, values: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_f64s(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() != expected * 8 {
        return Err(Error::Format {
            path: path.into(),
            offset: bytes.len().min(expected * 8),
            message: format!(
                "expected {expected} little-endian f64 values ({} bytes), found {} bytes",
                expected * 8,
                bytes.len()
            ),
        });
    }
    let values: Vec<f64> =
        bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Format { path: path.into(), offset: i * 8, message: "non-finite value".into() });
    }
    Ok(values)
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}
