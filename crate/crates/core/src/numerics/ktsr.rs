//! The `KTSR` binary tensor format.
//!
//! Layout: magic `KTSR`, `u32` version (1), `u8` dtype (0 = f32), `u32` ndim,
//! `ndim` × `u32` extents, then the little-endian f32 payload. No padding.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::{Error, Result};

use super::tensor::{numel, Tensor};

pub const MAGIC: &[u8; 4] = b"KTSR";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(13 + 4 * t.ndim() + 4 * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
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
        let Some(end) = end else {
            return Err(Error::Format(format!(
                "truncated tensor: {what} needs {n} bytes at offset {}, only {} remain",
                self.pos,
                self.buf.len() - self.pos
            )));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Decodes one tensor from the front of `buf`, returning it and the bytes consumed.
pub fn decode_prefix(buf: &[u8]) -> Result<(Tensor, usize)> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Format("bad magic, not a KTSR tensor".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported KTSR version {version}")));
    }
    let dtype = r.take(1, "dtype")?[0];
    if dtype != DTYPE_F32 {
        return Err(Error::Format(format!("unsupported dtype code {dtype}")));
    }
    let ndim = r.u32("ndim")? as usize;
    if ndim > 16 {
        return Err(Error::Format(format!("implausible rank {ndim}")));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(r.u32("extent")? as usize);
    }
    let n = numel(&shape);
    let bytes = n
        .checked_mul(4)
        .ok_or_else(|| Error::Format(format!("shape {shape:?} overflows")))?;
    let payload = r.take(bytes, "payload")?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((Tensor::new(shape, data)?, r.pos))
}

/// Decodes a buffer holding exactly one tensor.
pub fn decode(buf: &[u8]) -> Result<Tensor> {
    let (t, used) = decode_prefix(buf)?;
    if used != buf.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after tensor",
            buf.len() - used
        )));
    }
    Ok(t)
}

pub fn write(path: &Path, t: &Tensor) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Tensor> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new([2, 1], vec![1.0, -2.0]).unwrap();
        let b = encode(&t);
        assert_eq!(&b[..4], b"KTSR");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(b[8], 0);
        assert_eq!(&b[9..13], &2u32.to_le_bytes());
        assert_eq!(&b[13..17], &2u32.to_le_bytes());
        assert_eq!(&b[17..21], &1u32.to_le_bytes());
        assert_eq!(&b[21..25], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 29);
    }

    #[test]
    fn scalar_round_trip() {
        let t = Tensor::scalar(3.5f32);
        assert!(decode(&encode(&t)).unwrap().bit_eq(&t));
    }

    #[test]
    fn corrupt_inputs_are_format_errors() {
        let t = Tensor::from_fn([3, 4], |i| i as f32);
        let good = encode(&t);
        for cut in [0, 3, 8, 12, good.len() - 1] {
            assert!(
                matches!(decode(&good[..cut]), Err(Error::Format(_))),
                "cut {cut}"
            );
        }
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::Format(_))));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(decode(&bad), Err(Error::Format(_))));
        let mut bad = good.clone();
        bad[8] = 1;
        assert!(matches!(decode(&bad), Err(Error::Format(_))));
        let mut bad = good;
        bad.push(0);
        assert!(matches!(decode(&bad), Err(Error::Format(_))));
    }
}
