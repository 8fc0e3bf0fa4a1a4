//! Self-describing binary checkpoint.
//!
//! ```text
//! magic    "SLPNETCK"
//! version  u32
//! config   u32 length + JSON ModelConfig
//! entries  u32 count, then per entry:
//!            u32 name length, name bytes (UTF-8)
//!            u32 rank, rank × u32 dims
//!            f32 payload
//! sha256   32 bytes over everything above
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, SlpNet};
use crate::tensor::{Element, Shape, Tensor};

pub const MAGIC: &[u8; 8] = b"SLPNETCK";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

pub fn to_bytes<T: Element>(net: &SlpNet<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let config = serde_json::to_vec(net.config()).expect("config serializes");
    put_u32(&mut out, config.len());
    out.extend_from_slice(&config);
    let entries = net.params().entries();
    put_u32(&mut out, entries.len());
    for e in entries {
        put_u32(&mut out, e.name.len());
        out.extend_from_slice(e.name.as_bytes());
        let dims = e.value.shape().dims();
        put_u32(&mut out, dims.len());
        for d in dims {
            put_u32(&mut out, d);
        }
        for &v in e.value.data() {
            out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Parses a checkpoint, verifying checksum, magic and version, and rebuilds the
/// network. When `expected` is given the stored architecture must match it.
pub fn from_bytes<T: Element>(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<SlpNet<T>> {
    if bytes.len() < MAGIC.len() + 4 + DIGEST_LEN {
        return Err(Error::Checkpoint("file too short".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::ChecksumMismatch);
    }
    let mut r = Reader { buf: body, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let len = r.u32()? as usize;
    let config: ModelConfig =
        serde_json::from_slice(r.take(len)?).map_err(|e| Error::Checkpoint(format!("bad config: {e}")))?;
    if let Some(exp) = expected {
        if !exp.same_architecture(&config) {
            return Err(Error::Checkpoint(format!(
                "architecture mismatch: file has widths {:?} zeros {:?}, expected {:?} {:?}",
                config.stage_widths, config.dilation_zeros, exp.stage_widths, exp.dilation_zeros
            )));
        }
    }
    let mut net = SlpNet::<T>::build(config)?;
    let count = r.u32()? as usize;
    if count != net.params().len() {
        return Err(Error::Checkpoint(format!(
            "expected {} entries, file has {count}",
            net.params().len()
        )));
    }
    for i in 0..count {
        let name_len = r.u32()? as usize;
        let name =
            std::str::from_utf8(r.take(name_len)?).map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        if rank != 4 {
            return Err(Error::Checkpoint(format!("{name}: rank {rank}, expected 4")));
        }
        let mut d = [0usize; 4];
        for x in &mut d {
            *x = r.u32()? as usize;
        }
        let shape = Shape::new(d[0], d[1], d[2], d[3]);
        let entry = &mut net.params_mut().entries_mut()[i];
        if entry.name != name {
            return Err(Error::Checkpoint(format!(
                "entry {i}: expected {:?}, found {name:?}",
                entry.name
            )));
        }
        if entry.value.shape() != shape {
            return Err(Error::shape("checkpoint", entry.value.shape(), shape));
        }
        let raw = r.take(shape.numel() * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| T::from_f64_lossy(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        entry.value = Tensor::from_vec(shape, data)?;
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes after last entry".into()));
    }
    Ok(net)
}

pub fn save<T: Element>(net: &SlpNet<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(net)).map_err(|e| Error::io(path, e))
}

pub fn load<T: Element>(path: impl AsRef<Path>, expected: Option<&ModelConfig>) -> Result<SlpNet<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, expected)
}
