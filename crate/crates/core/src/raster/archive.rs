//! Array archives: a directory holding `header.json` plus one raw little-endian
//! float32 blob per named array. Used for patch sets and other intermediate
//! products so downstream consumers can mmap or stream the raw arrays.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HEADER_FILE: &str = "header.json";
pub const DTYPE_F32LE: &str = "f32le";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArrayMeta {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchiveHeader {
    pub arrays: BTreeMap<String, ArrayMeta>,
    /// Free-form metadata: grid geometry, normalization constants, provenance.
    #[serde(default)]
    pub metadata: serde_json::Value,
}

/// Write named arrays and metadata into `dir` (created if absent).
pub fn write_archive(
    dir: impl AsRef<Path>,
    arrays: &[(&str, Vec<usize>, &[f32])],
    metadata: serde_json::Value,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut header = ArchiveHeader {
        arrays: BTreeMap::new(),
        metadata,
    };
    for (name, shape, data) in arrays {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Archive(format!(
                "array `{name}`: shape {:?} holds {expected} values, got {}",
                shape,
                data.len()
            )));
        }
        let file = format!("{name}.bin");
        let mut bytes = Vec::with_capacity(data.len() * 4);
        for v in *data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(dir.join(&file), bytes)?;
        header.arrays.insert(
            name.to_string(),
            ArrayMeta {
                shape: shape.clone(),
                dtype: DTYPE_F32LE.to_string(),
                file,
            },
        );
    }
    let json = serde_json::to_vec_pretty(&header)?;
    fs::write(dir.join(HEADER_FILE), json)?;
    Ok(())
}

pub fn read_header(dir: impl AsRef<Path>) -> Result<ArchiveHeader> {
    let path = dir.as_ref().join(HEADER_FILE);
    let bytes = fs::read(&path)
        .map_err(|e| Error::Archive(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Load one named array; returns its shape and data.
pub fn read_array(dir: impl AsRef<Path>, name: &str) -> Result<(Vec<usize>, Vec<f32>)> {
    let dir = dir.as_ref();
    let header = read_header(dir)?;
    let meta = header
        .arrays
        .get(name)
        .ok_or_else(|| Error::Archive(format!("archive has no array `{name}`")))?;
    if meta.dtype != DTYPE_F32LE {
        return Err(Error::Archive(format!(
            "array `{name}` has dtype {}, expected {DTYPE_F32LE}",
            meta.dtype
        )));
    }
    let bytes = fs::read(dir.join(&meta.file))?;
    let expected: usize = meta.shape.iter().product();
    if bytes.len() != expected * 4 {
        return Err(Error::Archive(format!(
            "array `{name}`: blob holds {} bytes, expected {}",
            bytes.len(),
            expected * 4
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((meta.shape.clone(), data))
}
