//! Encoder checkpoint blob:
//! `b"SSNC"`, `u16` format version, `u32` length + JSON config echo,
//! `u32` parameter count, then little-endian `f32` parameters.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::encoder::{EncoderConfig, ModelShape, StreamEncoder};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SSNC";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    encoder: EncoderConfig,
    shape: ModelShape,
    #[serde(default)]
    label_space: Vec<String>,
}

pub fn save_checkpoint(encoder: &StreamEncoder, label_space: &[String], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = serde_json::to_vec(&Header {
        encoder: encoder.config().clone(),
        shape: *encoder.shape(),
        label_space: label_space.to_vec(),
    })?;
    let mut out = Vec::with_capacity(14 + header.len() + encoder.num_params() * 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(encoder.num_params() as u32).to_le_bytes());
    for p in encoder.params() {
        out.extend_from_slice(&(*p as f32).to_le_bytes());
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Loads an encoder and the label space it was trained on.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(StreamEncoder, Vec<String>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::parse(path, 0, msg.to_string());
    let mut cur: &[u8] = bytes.as_slice();
    fn split<'a>(cur: &mut &'a [u8], n: usize) -> Option<&'a [u8]> {
        if cur.len() < n {
            return None;
        }
        let (head, rest) = cur.split_at(n);
        *cur = rest;
        Some(head)
    }
    let mut take = |n: usize| split(&mut cur, n).ok_or_else(|| bad("truncated checkpoint"));
    if take(4)? != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = u16::from_le_bytes(take(2)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let hlen = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let header: Header = serde_json::from_slice(take(hlen)?)?;
    let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let params = take(count * 4)?
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    if !cur.is_empty() {
        return Err(bad("trailing bytes after parameters"));
    }
    let encoder = StreamEncoder::from_parts(header.encoder, header.shape, params)?;
    Ok((encoder, header.label_space))
}
