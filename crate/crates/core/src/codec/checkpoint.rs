//! Codebook checkpoint layout (all integers little-endian):
//!
//! | offset | size      | field                         |
//! |--------|-----------|-------------------------------|
//! | 0      | 4         | magic `OLCB`                  |
//! | 4      | 4 (u32)   | format version                |
//! | 8      | 4 (u32)   | K, codeword count             |
//! | 12     | 4 (u32)   | D, codeword dimension         |
//! | 16     | 8 (u64)   | training seed                 |
//! | 24     | 4·K·D     | f32 entries, row-major        |

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{Codebook, CodecError, Result};

pub const CODEBOOK_MAGIC: [u8; 4] = *b"OLCB";
pub const CODEBOOK_FORMAT_VERSION: u32 = 1;
const HEADER: usize = 24;

pub(crate) fn encode(cb: &Codebook) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + 4 * cb.entries.len());
    out.extend_from_slice(&CODEBOOK_MAGIC);
    out.extend_from_slice(&CODEBOOK_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(cb.len() as u32).to_le_bytes());
    out.extend_from_slice(&(cb.dim() as u32).to_le_bytes());
    out.extend_from_slice(&cb.seed.to_le_bytes());
    for v in cb.entries.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub(crate) fn decode(bytes: &[u8]) -> Result<Codebook> {
    if bytes.len() < HEADER || bytes[..4] != CODEBOOK_MAGIC {
        return Err(CodecError::Format("not a codebook checkpoint".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != CODEBOOK_FORMAT_VERSION {
        return Err(CodecError::VersionMismatch {
            expected: CODEBOOK_FORMAT_VERSION,
            found: version,
        });
    }
    let k = u32_at(8) as usize;
    let d = u32_at(12) as usize;
    let seed = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let body = &bytes[HEADER..];
    if body.len() != 4 * k * d {
        return Err(CodecError::Format(format!(
            "expected {} payload bytes for {k}x{d}, found {}",
            4 * k * d,
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let entries = Array2::from_shape_vec((k, d), values).map_err(|e| CodecError::Format(e.to_string()))?;
    Codebook::new(entries, seed)
}

pub fn write_codebook(path: impl AsRef<Path>, cb: &Codebook) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(&encode(cb))?;
    file.sync_all()?;
    Ok(())
}

pub fn read_codebook(path: impl AsRef<Path>) -> Result<Codebook> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}
