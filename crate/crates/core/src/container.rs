//! Self-describing binary container: magic, format version, JSON header,
//! little-endian f64 arrays, FNV-1a checksum trailer.
//!
//! One format backs field snapshots, plane sections, and surrogate models;
//! they differ only in magic bytes and header payload. Headers can be
//! inspected without reading the arrays; full reads verify the checksum
//! before handing anything back.

use crate::error::{Error, Result};
use serde::{de::DeserializeOwned, Serialize};
use std::fs;
use std::io::Read;
use std::path::Path;

pub const FIELD_MAGIC: &[u8; 8] = b"MWFIELD\0";
pub const MODEL_MAGIC: &[u8; 8] = b"MWFNOMD\0";
pub const FIELD_FORMAT_VERSION: u32 = 1;
pub const MODEL_FORMAT_VERSION: u32 = 1;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Serialize header + arrays into the container byte layout.
pub fn encode<H: Serialize>(
    magic: &[u8; 8],
    version: u32,
    header: &H,
    arrays: &[&[f64]],
) -> Result<Vec<u8>> {
    let header_json = serde_json::to_vec(header)?;
    let mut buf = Vec::with_capacity(
        8 + 4 + 8 + header_json.len() + 4 + arrays.iter().map(|a| 8 + a.len() * 8).sum::<usize>() + 8,
    );
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&version.to_le_bytes());
    buf.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header_json);
    buf.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for a in arrays {
        buf.extend_from_slice(&(a.len() as u64).to_le_bytes());
        for v in a.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sum = fnv1a(&buf);
    buf.extend_from_slice(&sum.to_le_bytes());
    Ok(buf)
}

pub fn write_file<H: Serialize>(
    path: &Path,
    magic: &[u8; 8],
    version: u32,
    header: &H,
    arrays: &[&[f64]],
) -> Result<()> {
    let bytes = encode(magic, version, header, arrays)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Header plus the payload arrays of a decoded container.
pub type Decoded<H> = (H, Vec<Vec<f64>>);

/// Decode a container, verifying magic, version, and checksum first.
pub fn decode<H: DeserializeOwned>(
    bytes: &[u8],
    magic: &[u8; 8],
    expect_version: u32,
) -> Result<Decoded<H>> {
    if bytes.len() < 8 + 4 + 8 + 4 + 8 {
        return Err(Error::Format("truncated container".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(trailer.try_into().unwrap());
    if fnv1a(body) != stored {
        return Err(Error::Format("checksum mismatch (file corrupted)".into()));
    }
    let mut cur = body;
    let mut take = |n: usize| -> Result<&[u8]> {
        if cur.len() < n {
            return Err(Error::Format("truncated container".into()));
        }
        let (head, rest) = cur.split_at(n);
        cur = rest;
        Ok(head)
    };
    if take(8)? != magic {
        return Err(Error::Format("wrong magic bytes".into()));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != expect_version {
        return Err(Error::Format(format!(
            "format version mismatch: file has v{version}, this build reads v{expect_version}"
        )));
    }
    let header_len = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let header: H = serde_json::from_slice(take(header_len)?)?;
    let n_arrays = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut arrays = Vec::with_capacity(n_arrays);
    for _ in 0..n_arrays {
        let len = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let raw = take(len * 8)?;
        let mut a = Vec::with_capacity(len);
        for chunk in raw.chunks_exact(8) {
            a.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        arrays.push(a);
    }
    if !cur.is_empty() {
        return Err(Error::Format("trailing bytes after arrays".into()));
    }
    Ok((header, arrays))
}

pub fn read_file<H: DeserializeOwned>(
    path: &Path,
    magic: &[u8; 8],
    expect_version: u32,
) -> Result<Decoded<H>> {
    decode(&fs::read(path)?, magic, expect_version)
}

/// Read magic, version, and header without touching the arrays or checksum.
pub fn read_header_only<H: DeserializeOwned>(path: &Path, magic: &[u8; 8]) -> Result<(u32, H)> {
    let mut f = fs::File::open(path)?;
    let mut fixed = [0u8; 8 + 4 + 8];
    f.read_exact(&mut fixed)
        .map_err(|_| Error::Format("truncated container".into()))?;
    if &fixed[0..8] != magic {
        return Err(Error::Format("wrong magic bytes".into()));
    }
    let version = u32::from_le_bytes(fixed[8..12].try_into().unwrap());
    let header_len = u64::from_le_bytes(fixed[12..20].try_into().unwrap()) as usize;
    let mut header_bytes = vec![0u8; header_len];
    f.read_exact(&mut header_bytes)
        .map_err(|_| Error::Format("truncated header".into()))?;
    Ok((version, serde_json::from_slice(&header_bytes)?))
}

/// Content hash used by sweep manifests.
pub fn hash_bytes(bytes: &[u8]) -> u64 {
    fnv1a(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Hdr {
        name: String,
        n: usize,
    }

    #[test]
    fn round_trip() {
        let hdr = Hdr { name: "t".into(), n: 3 };
        let a = [1.0, 2.5, -3.25];
        let bytes = encode(FIELD_MAGIC, 1, &hdr, &[&a]).unwrap();
        let (back, arrays): (Hdr, _) = decode(&bytes, FIELD_MAGIC, 1).unwrap();
        assert_eq!(back, hdr);
        assert_eq!(arrays[0], a.to_vec());
    }

    #[test]
    fn corrupted_byte_fails_checksum() {
        let hdr = Hdr { name: "t".into(), n: 1 };
        let mut bytes = encode(FIELD_MAGIC, 1, &hdr, &[&[42.0]]).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x10;
        let err = decode::<Hdr>(&bytes, FIELD_MAGIC, 1).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn version_mismatch_detected() {
        let hdr = Hdr { name: "t".into(), n: 1 };
        let bytes = encode(FIELD_MAGIC, 2, &hdr, &[&[42.0]]).unwrap();
        // checksum is fine, version is not
        let err = decode::<Hdr>(&bytes, FIELD_MAGIC, 1).unwrap_err();
        assert!(err.to_string().contains("version"));
    }
}
