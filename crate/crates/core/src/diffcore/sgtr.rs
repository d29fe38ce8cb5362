//! Raw tensor container: `"SGTR"`, u32 version, u32 rank, rank x u32 dims,
//! then f32 values, all little-endian.

use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const SGTR_MAGIC: &[u8; 4] = b"SGTR";
pub const SGTR_VERSION: u32 = 1;
const MAX_RANK: u32 = 16;

/// Little-endian cursor over a byte buffer that reports offsets on failure.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn position(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn bytes(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(
                self.pos,
                format!("truncated {what}: need {n} bytes, {} left", self.remaining()),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| Error::format(self.pos, format!("{what} length overflows")))?;
        let b = self.bytes(len, what)?;
        Ok(b.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }

    pub(crate) fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let at = self.pos;
        let got = self.bytes(4, "magic")?;
        if got != magic {
            return Err(Error::format(
                at,
                format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(got), String::from_utf8_lossy(magic)),
            ));
        }
        Ok(())
    }

    pub(crate) fn expect_version(&mut self, version: u32) -> Result<()> {
        let at = self.pos;
        let v = self.u32("version")?;
        if v != version {
            return Err(Error::format(at, format!("unsupported version {v}, expected {version}")));
        }
        Ok(())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::format(self.pos, format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

pub(crate) fn put_f32s<T: Scalar>(out: &mut Vec<u8>, values: &[T]) {
    for v in values {
        out.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
    }
}

/// Appends the SGTR encoding of `t` (values rounded to f32).
pub fn encode_into<T: Scalar>(t: &Tensor<T>, out: &mut Vec<u8>) {
    out.extend_from_slice(SGTR_MAGIC);
    out.extend_from_slice(&SGTR_VERSION.to_le_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for d in t.shape() {
        out.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    put_f32s(out, t.data());
}

pub fn encode<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * t.rank() + 4 * t.numel());
    encode_into(t, &mut out);
    out
}

/// Decodes one SGTR record from the reader's position.
pub(crate) fn decode_from(r: &mut Reader<'_>) -> Result<Tensor<f32>> {
    r.expect_magic(SGTR_MAGIC)?;
    r.expect_version(SGTR_VERSION)?;
    let at = r.position();
    let rank = r.u32("rank")?;
    if rank > MAX_RANK {
        return Err(Error::format(at, format!("rank {rank} exceeds {MAX_RANK}")));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    let mut numel: usize = 1;
    for _ in 0..rank {
        let at = r.position();
        let d = r.u32("dimension")? as usize;
        if d == 0 {
            return Err(Error::format(at, "zero dimension"));
        }
        numel = numel
            .checked_mul(d)
            .filter(|n| n.checked_mul(4).is_some_and(|b| b <= r.remaining()))
            .ok_or_else(|| Error::format(at, "dimensions exceed payload"))?;
        shape.push(d);
    }
    let data = r.f32s(numel, "tensor payload")?;
    Ok(Tensor::from_parts(shape, data))
}

/// Decodes a buffer holding exactly one SGTR record.
pub fn decode(buf: &[u8]) -> Result<Tensor<f32>> {
    let mut r = Reader::new(buf);
    let t = decode_from(&mut r)?;
    r.finish()?;
    Ok(t)
}

pub fn write<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf)
}
