//! The `MSMS1` tensor container used for checkpoints and feature dumps.
//!
//! Layout: the 5-byte magic, then per tensor the name length, the UTF-8
//! name, the rank and each extent (all little-endian `u32`), followed by
//! the little-endian `f32` payload in row-major order.

use std::fs;
use std::path::Path;

use msms_core::{ParamStore, Tensor};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"MSMS1";

/// Serializes named tensors in the given order.
pub fn encode<'a>(named: impl IntoIterator<Item = (&'a str, &'a Tensor<f32>)>) -> Result<Vec<u8>> {
    let mut out = MAGIC.to_vec();
    for (name, t) in named {
        let len = u32::try_from(name.len()).map_err(|_| Error::Usage(format!("parameter name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::Usage(format!("extent of {name} exceeds 32 bits")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Parses a container; `path` only labels errors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let bad = |reason: &str| Error::format(path, reason);
    if bytes.get(..MAGIC.len()) != Some(MAGIC.as_slice()) {
        return Err(bad("missing MSMS1 magic"));
    }
    let mut r = Reader { bytes, pos: MAGIC.len() };
    let mut out = Vec::new();
    while r.pos < bytes.len() {
        let n = r.u32().ok_or_else(|| bad("truncated name length"))? as usize;
        let name = r.take(n).ok_or_else(|| bad("truncated name"))?;
        let name = String::from_utf8(name.to_vec()).map_err(|_| bad("parameter name is not UTF-8"))?;
        let rank = r.u32().ok_or_else(|| bad("truncated rank"))? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad("truncated extents"))?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| bad("extent product overflows"))?;
        let payload = numel
            .checked_mul(4)
            .and_then(|b| r.take(b))
            .ok_or_else(|| Error::format(path, format!("truncated payload of {name}")))?;
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        out.push((name, Tensor::new(&shape, data)?));
    }
    Ok(out)
}

pub fn write_tensors<'a>(path: &Path, named: impl IntoIterator<Item = (&'a str, &'a Tensor<f32>)>) -> Result<()> {
    crate::fsutil::write_atomic(path, &encode(named)?)
}

pub fn read_tensors(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    if !path.exists() {
        return Err(Error::Missing { what: "tensor file", path: path.into() });
    }
    decode(&fs::read(path).map_err(Error::io(path))?, path)
}

/// Writes every entry of `store` in registration order.
pub fn save_store(path: &Path, store: &ParamStore<f32>) -> Result<()> {
    write_tensors(path, store.iter())
}

/// Overwrites `store` from a checkpoint with exactly its layout.
pub fn load_store(path: &Path, store: &mut ParamStore<f32>) -> Result<()> {
    let named = read_tensors(path)?;
    store.load(named.iter().map(|(n, t)| (n.as_str(), t)))?;
    Ok(())
}

/// Single-tensor feature file.
pub fn write_feature(path: &Path, name: &str, t: &Tensor<f32>) -> Result<()> {
    write_tensors(path, [(name, t)])
}

pub fn read_feature(path: &Path, name: &str) -> Result<Tensor<f32>> {
    read_tensors(path)?
        .into_iter()
        .find(|(n, _)| n == name)
        .map(|(_, t)| t)
        .ok_or_else(|| Error::format(path, format!("no tensor named {name}")))
}
