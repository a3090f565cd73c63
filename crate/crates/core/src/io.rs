//! File output: atomic writes, PPM images, JSON documents and hashes.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};
use crate::render::Image;

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| LabError::io(parent, e))?;
        }
    }
    let name = path
        .file_name()
        .ok_or_else(|| LabError::io(path, std::io::Error::other("path has no file name")))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(".tmp");
    let tmp: PathBuf = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(|e| LabError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| LabError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| LabError::io(path, std::io::Error::other(e)))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| LabError::io(path, e))
}

/// Binary PPM (P6), colours clamped to [0, 1] and rounded to 8 bits.
pub fn ppm_bytes(image: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    for px in &image.pixels {
        for c in px {
            out.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

pub fn write_ppm(path: &Path, image: &Image) -> Result<()> {
    write_atomic(path, &ppm_bytes(image))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| LabError::io(path, e))?))
}

/// Matrix as CSV with a header row.
pub fn matrix_csv(header: &[String], m: &DMatrix<f64>) -> Result<String> {
    if header.len() != m.ncols() {
        return Err(LabError::Shape(format!("{} column names for {} columns", header.len(), m.ncols())));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| LabError::Numeric(format!("csv: {e}"));
    w.write_record(header).map_err(err)?;
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| format!("{v:e}"))).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| LabError::Numeric(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| LabError::Numeric(format!("csv: {e}")))
}
