//! Binary checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic[8] version:u32 hash_len:u32 hash[..] step:u64 adam_t:u64
//! n_segments:u32 { name_len:u32 name[..] offset:u64 len:u64 ndim:u32 dims:u64* }*
//! n_params:u64 values:f64* m:f64* v:f64* n_losses:u64 losses:f64*
//! sha256[32] over everything before it
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::autodiff::Segment;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PTYCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub step: u64,
    pub adam_t: u64,
    pub segments: Vec<Segment>,
    pub values: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub losses: Vec<f64>,
}

fn put_floats(buf: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(CHECKPOINT_MAGIC);
        b.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        b.extend_from_slice(&(self.config_hash.len() as u32).to_le_bytes());
        b.extend_from_slice(self.config_hash.as_bytes());
        b.extend_from_slice(&self.step.to_le_bytes());
        b.extend_from_slice(&self.adam_t.to_le_bytes());
        b.extend_from_slice(&(self.segments.len() as u32).to_le_bytes());
        for s in &self.segments {
            b.extend_from_slice(&(s.name.len() as u32).to_le_bytes());
            b.extend_from_slice(s.name.as_bytes());
            b.extend_from_slice(&(s.offset as u64).to_le_bytes());
            b.extend_from_slice(&(s.len as u64).to_le_bytes());
            b.extend_from_slice(&(s.shape.len() as u32).to_le_bytes());
            for &d in &s.shape {
                b.extend_from_slice(&(d as u64).to_le_bytes());
            }
        }
        b.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        put_floats(&mut b, &self.values);
        put_floats(&mut b, &self.m);
        put_floats(&mut b, &self.v);
        b.extend_from_slice(&(self.losses.len() as u64).to_le_bytes());
        put_floats(&mut b, &self.losses);
        let digest = Sha256::digest(&b);
        b.extend_from_slice(&digest);
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CHECKPOINT_MAGIC.len() + 4 + 32 {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checkpoint("checksum mismatch (truncated or corrupt file)".into()));
        }
        let mut r = Reader { buf: body, pos: 12 };
        let hash_len = r.u32()? as usize;
        let config_hash = String::from_utf8(r.take(hash_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("config hash is not utf-8".into()))?;
        let step = r.u64()?;
        let adam_t = r.u64()?;
        let n_seg = r.u32()? as usize;
        let mut segments = Vec::with_capacity(n_seg.min(1 << 16));
        for _ in 0..n_seg {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Checkpoint("segment name is not utf-8".into()))?;
            let offset = r.u64()? as usize;
            let len = r.u64()? as usize;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<_>>()?;
            segments.push(Segment { name, offset, len, shape });
        }
        let n = r.u64()? as usize;
        let values = r.floats(n)?;
        let m = r.floats(n)?;
        let v = r.floats(n)?;
        let n_loss = r.u64()? as usize;
        let losses = r.floats(n_loss)?;
        if r.pos != body.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Self {
            config_hash,
            step,
            adam_t,
            segments,
            values,
            m,
            v,
            losses,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("bad length".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

/// Writes through a temporary sibling and renames into place.
pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&ck.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            config_hash: "ab12".into(),
            step: 7,
            adam_t: 7,
            segments: vec![Segment {
                name: "w".into(),
                offset: 0,
                len: 2,
                shape: vec![2],
            }],
            values: vec![1.5, -0.0],
            m: vec![0.1, f64::MIN_POSITIVE],
            v: vec![0.2, 3.0],
            losses: vec![0.5; 7],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.values[1].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn known_header_bytes() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..12], b"PTYCKPT\0\x01\x00\x00\x00");
        assert_eq!(&bytes[12..16], &[4, 0, 0, 0]);
    }

    #[test]
    fn truncation_and_version() {
        let bytes = sample().to_bytes();
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 5]),
            Err(Error::Checkpoint(_))
        ));
        let mut bad = bytes.clone();
        bad[8] = 9;
        match Checkpoint::from_bytes(&bad) {
            Err(Error::Checkpoint(m)) => assert!(m.contains("version")),
            other => panic!("{other:?}"),
        }
    }
}
