//! Binary checkpoints (little-endian):
//!
//! ```text
//! magic          8 bytes  "DBCK01\n\0"
//! fingerprint    u64      architecture hash
//! record count   u32
//! per record:    u32 name length, UTF-8 name, u32 rank, rank × u32 dims,
//!                prod(dims) × f32 values
//! trailer:       u32 length + UTF-8 JSON model config (length 0 if absent)
//! ```

use std::fs;
use std::path::Path;

use super::{LayerSpec, ParamStore, Tensor};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DBCK01\n\0";

/// FNV-1a over the JSON serialization of the layer list plus `extra`.
pub fn architecture_fingerprint(layers: &[LayerSpec], extra: &str) -> u64 {
    let mut text = serde_json::to_string(layers).expect("layer specs serialize");
    text.push('\n');
    text.push_str(extra);
    fnv1a(text.as_bytes())
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub fingerprint: u64,
    pub params: ParamStore<f32>,
    pub config: Option<String>,
}

pub fn encode_checkpoint(
    params: &ParamStore<f32>,
    fingerprint: u64,
    config: Option<&str>,
) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&fingerprint.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let cfg = config.unwrap_or("").as_bytes();
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg);
    out
}

pub fn save_checkpoint(
    path: &Path,
    params: &ParamStore<f32>,
    fingerprint: u64,
    config: Option<&str>,
) -> Result<()> {
    fs::write(path, encode_checkpoint(params, fingerprint, config))?;
    Ok(())
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut at = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let end = at
            .checked_add(n)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::format(path, "truncated checkpoint"))?;
        let s = &bytes[at..end];
        at = end;
        Ok(s)
    };
    if take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "bad checkpoint magic or version"));
    }
    let fingerprint = u64::from_le_bytes(take(8)?.try_into().unwrap());
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap()) as usize;
    let count = u32_at(take(4)?);
    let mut params = ParamStore::new();
    for _ in 0..count {
        let nlen = u32_at(take(4)?);
        let name = std::str::from_utf8(take(nlen)?)
            .map_err(|_| Error::format(path, "parameter name is not UTF-8"))?
            .to_string();
        let rank = u32_at(take(4)?);
        if rank > 4 {
            return Err(Error::format(path, format!("{name}: rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32_at(take(4)?));
        }
        let n: usize = shape.iter().product();
        let raw = take(
            n.checked_mul(4)
                .ok_or_else(|| Error::format(path, "size overflow"))?,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if params.find(&name).is_some() {
            return Err(Error::format(path, format!("duplicate record {name}")));
        }
        params.add(name, Tensor::from_vec(&shape, data)?);
    }
    let clen = u32_at(take(4)?);
    let config = if clen == 0 {
        None
    } else {
        Some(
            std::str::from_utf8(take(clen)?)
                .map_err(|_| Error::format(path, "config is not UTF-8"))?
                .to_string(),
        )
    };
    if at != bytes.len() {
        return Err(Error::format(path, "trailing bytes in checkpoint"));
    }
    Ok(Checkpoint {
        fingerprint,
        params,
        config,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?, path)
}

/// Copies checkpoint values into `target` after checking the fingerprint
/// and every name and shape.
pub fn restore_into(
    ckpt: &Checkpoint,
    expected_fingerprint: u64,
    target: &mut ParamStore<f32>,
) -> Result<()> {
    if ckpt.fingerprint != expected_fingerprint {
        return Err(Error::Fingerprint {
            expected: expected_fingerprint,
            found: ckpt.fingerprint,
        });
    }
    if ckpt.params.len() != target.len() {
        return Err(Error::dim(
            "checkpoint",
            format!(
                "{} records for {} parameters",
                ckpt.params.len(),
                target.len()
            ),
        ));
    }
    for (src, dst) in ckpt.params.iter().zip(target.iter_mut()) {
        if src.name != dst.name || src.value.shape() != dst.value.shape() {
            return Err(Error::dim(
                "checkpoint",
                format!(
                    "record {} {:?} does not match parameter {} {:?}",
                    src.name,
                    src.value.shape(),
                    dst.name,
                    dst.value.shape()
                ),
            ));
        }
        dst.value = src.value.clone();
    }
    Ok(())
}
