//! `FVF1` feature files: magic, `u32` n, `u32` d, then `n * d` little-endian
//! binary32 values in clip-major order. The file carries no video id; readers
//! take it from the file stem.

use std::fs;
use std::path::Path;

use super::FeatureSet;
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"FVF1";
const HEADER_LEN: usize = 12;

pub fn encode(fs: &FeatureSet) -> Result<Vec<u8>> {
    if fs.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let n = u32::try_from(fs.n()).map_err(|_| Error::InvalidConfig("n exceeds u32".into()))?;
    let d = u32::try_from(fs.d()).map_err(|_| Error::InvalidConfig("d exceeds u32".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * fs.data().len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&d.to_le_bytes());
    for v in fs.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(video_id: &str, bytes: &[u8]) -> Result<FeatureSet> {
    if bytes.len() < 4 || &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::BadMagic { expected: "FVF1" });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedPayload {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload = &bytes[HEADER_LEN..];
    let expected = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| Error::InvalidConfig("header dimensions overflow".into()))?;
    if payload.len() != expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FeatureSet::new(video_id, n, d, data)
}

pub fn write_feature_file(fs: &FeatureSet, destination: &Path) -> Result<()> {
    let bytes = encode(fs)?;
    fs::write(destination, bytes).map_err(|e| Error::io(destination, e))
}

pub fn read_feature_file(source: &Path) -> Result<FeatureSet> {
    let bytes = fs::read(source).map_err(|e| Error::io(source, e))?;
    let video_id = source
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode(&video_id, &bytes)
}
