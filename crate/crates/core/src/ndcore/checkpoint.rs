//! `SWV1` checkpoint container.
//!
//! Layout: the four magic bytes, then for each parameter in name order a
//! `u32` name length, the UTF-8 name, a `u32` rank, `rank` `u32` dims and
//! the `f64` payload. All integers and floats are little-endian, no padding.

use std::path::Path;

use super::array::Array;
use super::params::ParamStore;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SWV1";

pub fn encode(params: &ParamStore) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    for (name, array) in params.iter() {
        out.extend((name.len() as u32).to_le_bytes());
        out.extend(name.as_bytes());
        out.extend((array.rank() as u32).to_le_bytes());
        for &d in array.shape() {
            out.extend((d as u32).to_le_bytes());
        }
        for &x in array.data() {
            out.extend(x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated checkpoint while reading {what}")))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParamStore> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let mut r = Reader { bytes, pos: 4 };
    let mut store = ParamStore::new();
    while r.pos < bytes.len() {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let shape = (0..rank)
            .map(|_| r.u32("dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let payload = r.take(numel * 8, &name)?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let array = Array::new(shape, data).map_err(|e| Error::Checkpoint {
            param: name.clone(),
            msg: e.to_string(),
        })?;
        store.insert(name, array);
    }
    Ok(store)
}

pub fn save(path: &Path, params: &ParamStore) -> Result<()> {
    std::fs::write(path, encode(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ParamStore> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
