//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "GSTLCKPT"
//! version    u32      FORMAT_VERSION
//! meta_len   u64      length of the metadata block
//! meta       bytes    UTF-8 JSON object (architecture, phase, seeds, ...)
//! count      u32      number of tensors
//! tensor*    name_len u16 | name bytes | rank u8 | dims u64 * rank | f32 * prod(dims)
//! digest     32 bytes SHA-256 of every preceding byte
//! ```
//!
//! Encoding is a pure function of the contents, so identical models give
//! identical bytes.

use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{GestaltError, Result};

pub const MAGIC: &[u8; 8] = b"GSTLCKPT";
pub const FORMAT_VERSION: u32 = 1;
const MAX_RANK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Self {
        Self {
            name: name.into(),
            shape,
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: Value,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| GestaltError::Checkpoint(format!("missing tensor `{name}`")))
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)
            .map_err(|e| GestaltError::Checkpoint(format!("metadata: {e}")))?;
        let mut out = Vec::with_capacity(
            64 + meta.len() + self.tensors.iter().map(|t| 4 * t.data.len() + 64).sum::<usize>(),
        );
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            let expect: usize = t.shape.iter().product();
            if expect != t.data.len() || t.shape.len() > MAX_RANK || t.name.len() > u16::MAX as usize {
                return Err(GestaltError::Checkpoint(format!(
                    "tensor `{}` has inconsistent shape {:?} for {} values",
                    t.name,
                    t.shape,
                    t.data.len()
                )));
            }
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 32 {
            return Err(GestaltError::Checkpoint("truncated".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(GestaltError::Checkpoint("digest mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(GestaltError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(GestaltError::Checkpoint(format!(
                "unsupported format version {version}"
            )));
        }
        let meta_len = r.len_u64()?;
        let meta: Value = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| GestaltError::Checkpoint(format!("metadata: {e}")))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| GestaltError::Checkpoint("tensor name is not UTF-8".into()))?
                .to_owned();
            let rank = r.u8()? as usize;
            if rank > MAX_RANK {
                return Err(GestaltError::Checkpoint(format!("rank {rank} too large")));
            }
            let mut shape = Vec::with_capacity(rank);
            let mut elems: usize = 1;
            for _ in 0..rank {
                let d = r.len_u64()?;
                elems = elems
                    .checked_mul(d)
                    .ok_or_else(|| GestaltError::Checkpoint("tensor size overflow".into()))?;
                shape.push(d);
            }
            let nbytes = elems
                .checked_mul(4)
                .ok_or_else(|| GestaltError::Checkpoint("tensor size overflow".into()))?;
            let raw = r.take(nbytes)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(NamedTensor { name, shape, data });
        }
        if r.pos != body.len() {
            return Err(GestaltError::Checkpoint(format!(
                "{} trailing bytes",
                body.len() - r.pos
            )));
        }
        Ok(Self { meta, tensors })
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
            .ok_or_else(|| GestaltError::Checkpoint("truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn len_u64(&mut self) -> Result<usize> {
        let b = self.take(8)?;
        usize::try_from(u64::from_le_bytes(b.try_into().unwrap()))
            .map_err(|_| GestaltError::Checkpoint("length overflow".into()))
    }
}
