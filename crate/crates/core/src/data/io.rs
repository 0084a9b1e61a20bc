//! Flat binary dataset files: magic `FMAS`, version `u32`, `N: u64`,
//! `D: u32`, `K: u32`, then `N×D` row-major `f64` features and `N` `u32`
//! labels. Everything little-endian.

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const DATASET_MAGIC: &[u8; 4] = b"FMAS";
pub const DATASET_VERSION: u32 = 1;

const HEADER_LEN: usize = 4 + 4 + 8 + 4 + 4;

pub fn write_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let mut buf =
        Vec::with_capacity(HEADER_LEN + dataset.features().data().len() * 8 + dataset.len() * 4);
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    buf.extend_from_slice(&(dataset.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(dataset.feature_dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(dataset.num_classes() as u32).to_le_bytes());
    for v in dataset.features().data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for &l in dataset.labels() {
        buf.extend_from_slice(&(l as u32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let malformed = |reason: String| Error::Malformed {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < HEADER_LEN {
        return Err(malformed(format!(
            "{} bytes is shorter than the header",
            bytes.len()
        )));
    }
    if &bytes[..4] != DATASET_MAGIC {
        return Err(malformed("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != DATASET_VERSION {
        return Err(malformed(format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let d = u32::from_le_bytes(bytes[16..20].try_into().expect("4 bytes")) as usize;
    let k = u32::from_le_bytes(bytes[20..24].try_into().expect("4 bytes")) as usize;
    let expected = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_mul(8))
        .and_then(|f| f.checked_add(n.checked_mul(4)?))
        .and_then(|b| b.checked_add(HEADER_LEN))
        .ok_or_else(|| malformed("header sizes overflow".into()))?;
    if bytes.len() != expected {
        return Err(malformed(format!(
            "expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let body = &bytes[HEADER_LEN..];
    let (feat, labels) = body.split_at(n * d * 8);
    let features: Vec<f64> = feat
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let labels: Vec<usize> = labels
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    Dataset::new(Tensor::from_vec(n, d, features)?, labels, k)
}
