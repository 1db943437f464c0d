//! Checkpoint file format.
//!
//! ```text
//! "CTLK" | u32 version | u32 blob count
//! per blob: u32 name length | UTF-8 name | u32 rank | rank x u64 dims | f32 payload
//! u32 CRC-32 of every preceding byte
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use ctl_core::checkpoint::{Blob, ModelCheckpoint, CHECKPOINT_FORMAT_VERSION};

use crate::error::{io_err, Result};

pub const MAGIC: &[u8; 4] = b"CTLK";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

impl CheckpointError {
    /// Stable numeric identifier, distinct per variant.
    pub fn code(&self) -> u32 {
        match self {
            CheckpointError::BadMagic => 10,
            CheckpointError::UnsupportedVersion { .. } => 11,
            CheckpointError::Truncated => 12,
            CheckpointError::ChecksumMismatch { .. } => 13,
            CheckpointError::Malformed(_) => 14,
        }
    }
}

pub fn encode_checkpoint(ck: &ModelCheckpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend(ck.format_version.to_le_bytes());
    out.extend((ck.blobs.len() as u32).to_le_bytes());
    for b in &ck.blobs {
        out.extend((b.name.len() as u32).to_le_bytes());
        out.extend_from_slice(b.name.as_bytes());
        out.extend((b.shape.len() as u32).to_le_bytes());
        for &d in &b.shape {
            out.extend((d as u64).to_le_bytes());
        }
        for &v in &b.data {
            out.extend(v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend(crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> std::result::Result<ModelCheckpoint, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if bytes.len() < 4 {
        return Err(if MAGIC.starts_with(bytes) { CheckpointError::Truncated } else { CheckpointError::BadMagic });
    }
    if r.take(4)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != CHECKPOINT_FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion { found: version, expected: CHECKPOINT_FORMAT_VERSION });
    }
    let count = r.u32()? as usize;
    let mut blobs = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| CheckpointError::Malformed("blob name is not UTF-8".into()))?.to_owned();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(usize::try_from(r.u64()?).map_err(|_| CheckpointError::Malformed("dimension overflows usize".into()))?);
        }
        let numel = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or_else(|| CheckpointError::Malformed("blob size overflows".into()))?;
        let raw = r.take(numel.checked_mul(4).ok_or(CheckpointError::Truncated)?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        blobs.push(Blob { name, shape, data });
    }
    let body_end = r.pos;
    let stored = r.u32()?;
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(CheckpointError::ChecksumMismatch { stored, computed });
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(ModelCheckpoint { format_version: version, blobs })
}

pub fn save_checkpoint(path: &Path, ck: &ModelCheckpoint) -> Result<()> {
    crate::pnm::write_bytes(path, &encode_checkpoint(ck))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(decode_checkpoint(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ModelCheckpoint {
        ModelCheckpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            blobs: vec![
                Blob { name: "a".into(), shape: vec![2, 2], data: vec![1.0, -0.0, f32::MIN_POSITIVE, 3.5] },
                Blob { name: "scalar".into(), shape: vec![], data: vec![7.0] },
            ],
        }
    }

    #[test]
    fn round_trip() {
        let bytes = encode_checkpoint(&sample());
        assert_eq!(&bytes[..4], MAGIC);
        assert_eq!(decode_checkpoint(&bytes).unwrap(), sample());
    }

    #[test]
    fn distinct_failures() {
        let bytes = encode_checkpoint(&sample());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(decode_checkpoint(&bad), Err(CheckpointError::BadMagic));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_checkpoint(&bad), Err(CheckpointError::UnsupportedVersion { found: 9, .. })));
        assert_eq!(decode_checkpoint(&bytes[..bytes.len() - 1]), Err(CheckpointError::Truncated));
        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 6] ^= 0x10;
        assert!(matches!(decode_checkpoint(&bad), Err(CheckpointError::ChecksumMismatch { .. })));
    }
}
