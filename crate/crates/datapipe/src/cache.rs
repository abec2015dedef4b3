//! On-disk cache for design matrices.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! | bytes          | content                       |
//! |----------------|-------------------------------|
//! | 0..8           | ASCII `IPGDSGN1`              |
//! | 8..16          | `u64` row count `n`           |
//! | 16..24         | `u64` column count `p`        |
//! | next `8·n·p`   | `f64` entries of `A`, row-major |
//! | next `8·n`     | `f64` labels `b`              |
//!
//! A JSON sidecar (`<name>.json`) records the shape, column statistics and
//! names, the seed, the pipeline version and a fingerprint of the inputs.

use std::fs;
use std::path::{Path, PathBuf};

use ipg_core::{Matrix, Vector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::design::{ColumnStats, DesignMatrix};
use crate::error::{io_err, DataError, Result};

pub const CACHE_MAGIC: &[u8; 8] = b"IPGDSGN1";
pub const CACHE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheMeta {
    pub format_version: u32,
    pub pipeline_version: u32,
    pub shape: [usize; 2],
    pub column_stats: Vec<ColumnStats>,
    pub column_names: Vec<String>,
    pub seed: u64,
    pub fingerprint: String,
    pub source: String,
}

/// Hex SHA-256 over length-prefixed parts, so part boundaries matter.
pub fn fingerprint(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

/// Fingerprint of the contents of the given files.
pub fn file_fingerprint(paths: &[PathBuf]) -> Result<String> {
    let mut h = Sha256::new();
    for p in paths {
        let bytes = fs::read(p).map_err(io_err(p))?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn encode(design: &DesignMatrix) -> Vec<u8> {
    let (n, p) = design.a.shape();
    let mut out = Vec::with_capacity(24 + 8 * n * (p + 1));
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(p as u64).to_le_bytes());
    for i in 0..n {
        for j in 0..p {
            out.extend_from_slice(&design.a[(i, j)].to_le_bytes());
        }
    }
    for v in design.b.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes the binary layout into `(A, b)`.
pub fn decode(bytes: &[u8], file: &str) -> Result<(Matrix, Vector)> {
    let fail = |offset: usize, reason: &str| DataError::Format {
        file: file.to_string(),
        offset: offset as u64,
        reason: reason.to_string(),
    };
    if bytes.len() < 24 {
        return Err(fail(bytes.len(), "truncated header"));
    }
    if &bytes[..8] != CACHE_MAGIC {
        return Err(fail(0, "bad cache magic"));
    }
    let word = |k: usize| u64::from_le_bytes(bytes[k..k + 8].try_into().unwrap());
    let (n, p) = (word(8) as usize, word(16) as usize);
    let expected = 24 + 8 * n * (p + 1);
    if bytes.len() != expected {
        return Err(fail(bytes.len().min(expected), "body length does not match header"));
    }
    let f = |k: usize| f64::from_le_bytes(bytes[k..k + 8].try_into().unwrap());
    let a = Matrix::from_fn(n, p, |i, j| f(24 + 8 * (i * p + j)));
    let off = 24 + 8 * n * p;
    let b = Vector::from_fn(n, |i, _| f(off + 8 * i));
    Ok((a, b))
}

fn paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{name}.bin")), dir.join(format!("{name}.json")))
}

pub fn write_cache(dir: &Path, name: &str, design: &DesignMatrix, meta: &CacheMeta) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let (bin, json) = paths(dir, name);
    fs::write(&bin, encode(design)).map_err(io_err(&bin))?;
    let text = serde_json::to_string_pretty(meta).map_err(|e| DataError::Cache(e.to_string()))?;
    fs::write(&json, text).map_err(io_err(&json))?;
    Ok(())
}

/// Loads a cached design when its sidecar carries `fingerprint`; `None`
/// when absent or stale.
pub fn read_cache(dir: &Path, name: &str, fingerprint: &str) -> Result<Option<(DesignMatrix, CacheMeta)>> {
    let (bin, json) = paths(dir, name);
    if !bin.is_file() || !json.is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(&json).map_err(io_err(&json))?;
    let meta: CacheMeta = serde_json::from_str(&text).map_err(|e| DataError::Cache(e.to_string()))?;
    if meta.fingerprint != fingerprint || meta.format_version != CACHE_FORMAT_VERSION {
        return Ok(None);
    }
    let (a, b) = decode(&fs::read(&bin).map_err(io_err(&bin))?, &bin.display().to_string())?;
    if [a.nrows(), a.ncols()] != meta.shape {
        return Err(DataError::Cache(format!("{} shape disagrees with its sidecar", bin.display())));
    }
    let design = DesignMatrix {
        a,
        b,
        column_stats: meta.column_stats.clone(),
        column_names: meta.column_names.clone(),
    };
    Ok(Some((design, meta)))
}
