//! Little-endian binary helpers for checkpoint and index containers.

use crate::error::{Error, Result};

pub(crate) struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new(magic: &str) -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(magic.as_bytes());
        buf.push(b'\n');
        Encoder { buf }
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn str(&mut self, s: &str) {
        self.usize(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct Decoder<'a> {
    what: &'static str,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(buf: &'a [u8], magic: &str, what: &'static str) -> Result<Self> {
        let header_len = magic.len() + 1;
        if buf.len() < header_len
            || &buf[..magic.len()] != magic.as_bytes()
            || buf[magic.len()] != b'\n'
        {
            return Err(Error::Format {
                what,
                message: format!("missing {magic:?} header"),
            });
        }
        Ok(Decoder {
            what,
            buf,
            pos: header_len,
        })
    }

    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Format {
            what: self.what,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.fail(format!("truncated at byte {}", self.pos))),
        }
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| self.fail("length overflow"))
    }

    /// Reads a length that must fit in the remaining buffer at `elem` bytes each.
    pub fn len(&mut self, elem: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.saturating_mul(elem.max(1)) > self.buf.len() - self.pos {
            return Err(self.fail(format!("length {n} exceeds remaining data")));
        }
        Ok(n)
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| self.fail("length overflow"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.len(1)?;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| self.fail("invalid utf-8"))
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.fail(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}
