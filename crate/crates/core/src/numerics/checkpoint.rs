//! Binary checkpoints: `DYNCKPT1`, a little-endian `u64` header length, a
//! JSON header, then every parameter as a little-endian `f64`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ModelParams, SliceInfo};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DYNCKPT1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub precision: String,
    pub step: u64,
    pub slices: Vec<SliceInfo>,
}

pub fn encode_checkpoint(params: &ModelParams, step: u64) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        precision: "f64".into(),
        step,
        slices: params.slices().to_vec(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for x in params.as_slice() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8], origin: &Path) -> Result<(ModelParams, u64)> {
    let bad = |message: &str| Error::Format {
        path: origin.to_path_buf(),
        message: message.to_string(),
    };
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing checkpoint magic"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes
        .get(16..16 + hlen)
        .ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(body)?;
    if header.precision != "f64" {
        return Err(bad("unsupported precision"));
    }
    let data_bytes = &bytes[16 + hlen..];
    if !data_bytes.len().is_multiple_of(8) {
        return Err(bad("payload is not a whole number of f64 values"));
    }
    let data = data_bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let params = ModelParams::from_parts(header.slices, data)?;
    Ok((params, header.step))
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, step: u64) -> Result<()> {
    let bytes = encode_checkpoint(params, step)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, u64)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes, path)
}
