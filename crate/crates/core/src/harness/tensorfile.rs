//! Binary tensor files: magic `DDTF`, u16 version, u16 ndim, u32 dims, then
//! little-endian f32 payload in row-major order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 4] = b"DDTF";
pub const VERSION: u16 = 1;

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.shape().len() + 4 * t.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t.shape().len() as u16).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &x in t.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

/// Bounds-checked little-endian reader.
pub(crate) struct Reader<'a> {
    pub buf: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.buf.len() {
            return Err(Error::TruncatedPayload { expected: end, found: self.buf.len() });
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn rest(&self) -> &'a [u8] {
        &self.buf[self.pos..]
    }
}

/// Decodes one tensor starting at `buf[0]`; returns it with the number of
/// bytes consumed.
pub fn decode_prefix(buf: &[u8]) -> Result<(Tensor, usize)> {
    if buf.len() < 4 || &buf[..4] != MAGIC {
        return Err(Error::BadMagic { expected: "DDTF" });
    }
    let mut r = Reader::new(buf);
    r.take(4)?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let ndim = r.u16()? as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(r.u32()? as usize);
    }
    let n: usize = shape.iter().product();
    let payload = r.take(4 * n)?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((Tensor::new(shape, data)?, r.pos))
}

pub fn decode(buf: &[u8]) -> Result<Tensor> {
    let (t, used) = decode_prefix(buf)?;
    if used != buf.len() {
        return Err(Error::InvalidArgument(format!(
            "{} trailing bytes after tensor payload",
            buf.len() - used
        )));
    }
    Ok(t)
}

pub fn save(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    fs::write(path, encode(t))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_three_payload_is_24_bytes() {
        let t = Tensor::from_fn([2, 3], |i| i as f32);
        let bytes = encode(&t);
        let header = 4 + 2 + 2 + 2 * 4;
        assert_eq!(bytes.len() - header, 24);
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let t = Tensor::from_fn([3, 1, 2], |i| (i as f32).sin());
        let a = encode(&t);
        let b = encode(&decode(&a).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn truncated_is_reported() {
        let bytes = encode(&Tensor::from_fn([4, 4], |i| i as f32));
        let err = decode(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::TruncatedPayload { .. }), "{err}");
        assert!(err.to_string().contains("truncated payload"));
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode(&Tensor::zeros([1]));
        bytes[4] = 9;
        assert!(matches!(decode(&bytes), Err(Error::UnsupportedVersion(9))));
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::BadMagic { .. })));
    }
}
