//! Generator checkpoint layout (integers little-endian):
//!
//! | offset | size    | field                                  |
//! |--------|---------|----------------------------------------|
//! | 0      | 4       | magic `OLMG`                           |
//! | 4      | 4 (u32) | format version                         |
//! | 8      | 4 (u32) | header length H                        |
//! | 12     | H       | JSON header: config, codebook hash, tensor names and shapes |
//! | 12 + H | rest    | f32 tensors in header order, row-major |

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::Weights;
use super::{Generator, GeneratorConfig, GeneratorError, Result};

pub const GENERATOR_MAGIC: [u8; 4] = *b"OLMG";
pub const GENERATOR_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: GeneratorConfig,
    codebook_hash: Option<String>,
    tensors: Vec<(String, Vec<usize>)>,
}

pub(crate) fn encode(model: &Generator) -> Result<Vec<u8>> {
    let views = model.weights.views();
    let header = Header {
        config: model.config.clone(),
        codebook_hash: model.codebook_hash.clone(),
        tensors: views.iter().map(|(n, v)| (n.clone(), v.shape().to_vec())).collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| GeneratorError::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(12 + json.len() + 4 * model.parameter_count());
    out.extend_from_slice(&GENERATOR_MAGIC);
    out.extend_from_slice(&GENERATOR_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, v) in &views {
        for x in v.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub(crate) fn decode(bytes: &[u8]) -> Result<Generator> {
    let bad = |m: &str| GeneratorError::Format(m.to_string());
    if bytes.len() < 12 || bytes[..4] != GENERATOR_MAGIC {
        return Err(bad("not a generator checkpoint"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != GENERATOR_FORMAT_VERSION {
        return Err(GeneratorError::VersionMismatch { expected: GENERATOR_FORMAT_VERSION, found: version });
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let json = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| GeneratorError::Format(e.to_string()))?;
    header.config.validate()?;
    let mut weights = Weights::<f32>::zeros(&header.config);
    let expected: Vec<(String, Vec<usize>)> =
        weights.views().iter().map(|(n, v)| (n.clone(), v.shape().to_vec())).collect();
    if expected != header.tensors {
        return Err(bad("tensor table does not match the config"));
    }
    let mut body = bytes[12 + hlen..].chunks_exact(4);
    let total: usize = expected.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    if body.len() != total || !body.remainder().is_empty() {
        return Err(bad("payload size does not match the tensor table"));
    }
    for mut t in weights.views_mut() {
        for x in t.iter_mut() {
            *x = f32::from_le_bytes(body.next().expect("sized above").try_into().unwrap());
        }
    }
    Ok(Generator { config: header.config, weights, codebook_hash: header.codebook_hash })
}

pub fn write_generator(path: impl AsRef<Path>, model: &Generator) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(model)?)?;
    f.sync_all()?;
    Ok(())
}

/// Loads a checkpoint. With `codebook_hash` set, a model trained against a
/// different codebook is refused.
pub fn read_generator(path: impl AsRef<Path>, codebook_hash: Option<&str>) -> Result<Generator> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let model = decode(&bytes)?;
    if let (Some(want), Some(have)) = (codebook_hash, model.codebook_hash()) {
        if want != have {
            return Err(GeneratorError::CodebookMismatch { expected: have.to_string(), found: want.to_string() });
        }
    }
    Ok(model)
}
