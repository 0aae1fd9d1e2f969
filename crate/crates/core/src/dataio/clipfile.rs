//! `SWC1` clip tensors: magic, `u32` rank, `u32` dims, then row-major `f32`
//! values, all little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::ndcore::Array;

pub const MAGIC: &[u8; 4] = b"SWC1";

pub fn encode_clip(video: &Array) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * video.rank() + 4 * video.len());
    out.extend(MAGIC);
    out.extend((video.rank() as u32).to_le_bytes());
    for &d in video.shape() {
        out.extend((d as u32).to_le_bytes());
    }
    for &x in video.data() {
        out.extend((x as f32).to_le_bytes());
    }
    out
}

pub fn decode_clip(bytes: &[u8]) -> Result<Array> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::Format("bad clip magic".into()));
    }
    let u32_at = |pos: usize| -> Result<usize> {
        bytes
            .get(pos..pos + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
            .ok_or_else(|| Error::Format("truncated clip header".into()))
    };
    let rank = u32_at(4)?;
    let shape = (0..rank).map(|i| u32_at(8 + 4 * i)).collect::<Result<Vec<_>>>()?;
    let header = 8 + 4 * rank;
    let numel = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
    let expected = numel
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(header))
        .ok_or_else(|| Error::Format("clip dims overflow".into()))?;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "clip payload is {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    let data = bytes[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Array::new(shape, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_clip_binary(path: &Path, video: &Array) -> Result<()> {
    std::fs::write(path, encode_clip(video)).map_err(|e| Error::io(path, e))
}

pub fn read_clip_binary(path: &Path) -> Result<Array> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_clip(&bytes)
}
