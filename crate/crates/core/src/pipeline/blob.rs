//! Binary tensor blobs and checkpoints.
//!
//! Blob layout: `b"VETS"`, version byte, dtype byte (0 = f32), rank byte,
//! `rank` dims as u64 LE, then the row-major f32 LE payload.
//!
//! Checkpoint layout: `b"VECK"`, version byte, u32 LE entry count, then per
//! entry a u32 LE name length, the UTF-8 name, a u64 LE blob length and the blob.

use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const BLOB_MAGIC: &[u8; 4] = b"VETS";
pub const BLOB_VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 0;
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VECK";
pub const CHECKPOINT_VERSION: u8 = 1;

pub fn encode_tensor(t: &Tensor<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(7 + 8 * t.shape().len() + 4 * t.numel());
    out.extend_from_slice(BLOB_MAGIC);
    out.push(BLOB_VERSION);
    out.push(DTYPE_F32);
    out.push(t.shape().len() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Blob(format!("truncated at {what} (offset {})", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

fn decode_from(r: &mut Reader<'_>) -> Result<Tensor<f32>> {
    if r.take(4, "magic")? != BLOB_MAGIC {
        return Err(Error::Blob("bad magic, expected VETS".into()));
    }
    let version = r.u8("version")?;
    if version != BLOB_VERSION {
        return Err(Error::Blob(format!("unsupported version {version}")));
    }
    let dtype = r.u8("dtype")?;
    if dtype != DTYPE_F32 {
        return Err(Error::Blob(format!("unsupported dtype {dtype}")));
    }
    let rank = r.u8("rank")? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let d = r.u64("dims")?;
        shape.push(usize::try_from(d).map_err(|_| Error::Blob(format!("dimension {d} too large")))?);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Blob("payload size overflows".into()))?;
    let payload = r.take(count, "payload")?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Tensor::new(&shape, data).map_err(|e| Error::Blob(e.to_string()))
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let t = decode_from(&mut r)?;
    if r.pos != bytes.len() {
        return Err(Error::Blob(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(t)
}

pub fn write_blob(path: &Path, t: &Tensor<f32>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode_tensor(t)).map_err(|e| Error::io(path, e))
}

pub fn read_blob(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes).map_err(|e| Error::Blob(format!("{}: {e}", path.display())))
}

pub fn encode_checkpoint(entries: &[(String, Tensor<f32>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let blob = encode_tensor(t);
        out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
        out.extend_from_slice(&blob);
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Blob("bad magic, expected VECK".into()));
    }
    let version = r.u8("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Blob(format!("unsupported checkpoint version {version}")));
    }
    let n = r.u32("entry count")?;
    let mut out = Vec::new();
    for _ in 0..n {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Blob("parameter name is not UTF-8".into()))?
            .to_string();
        let blen = r.u64("blob length")? as usize;
        let t = decode_tensor(r.take(blen, "blob")?)?;
        out.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::Blob(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(out)
}

pub fn write_checkpoint(path: &Path, entries: &[(String, Tensor<f32>)]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode_checkpoint(entries)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| Error::Blob(format!("{}: {e}", path.display())))
}
