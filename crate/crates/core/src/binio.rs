//! Little-endian buffer readers/writers shared by the container formats.

use std::path::Path;

use crate::error::{Error, ParseError, Result};

pub(crate) fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

pub(crate) fn put_f32s(buf: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub(crate) fn put_f64s(buf: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) struct Reader<'a> {
    path: String,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(path: &Path, buf: &'a [u8]) -> Self {
        Reader {
            path: path.display().to_string(),
            buf,
            pos: 0,
        }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let remaining = self.buf.len() - self.pos;
        if remaining < n {
            return Err(Error::parse(
                self.path.clone(),
                ParseError::Truncated {
                    expected: n,
                    got: remaining,
                },
            ));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes([
            b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
        ]))
    }

    pub fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| self.invalid("string is not UTF-8"))
    }

    pub fn f32s(&mut self, count: usize) -> Result<Vec<f64>> {
        let bytes = self.take(count * 4)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect())
    }

    pub fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let bytes = self.take(count * 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect())
    }

    pub fn expect_magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != expected {
            return Err(Error::parse(
                self.path.clone(),
                ParseError::BadMagic {
                    expected,
                    got: [got[0], got[1], got[2], got[3]],
                },
            ));
        }
        Ok(())
    }

    pub fn expect_version(&mut self, supported: u32) -> Result<()> {
        let v = self.u32()?;
        if v != supported {
            return Err(Error::parse(self.path.clone(), ParseError::Version(v)));
        }
        Ok(())
    }

    pub fn invalid(&self, msg: impl Into<String>) -> Error {
        Error::parse(self.path.clone(), ParseError::Invalid(msg.into()))
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.invalid(format!(
                "{} unexpected trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}
