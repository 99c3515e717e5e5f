//! Little-endian binary container shared by every trained artifact.
//!
//! A file is an 8-byte magic, a `u32` format version, then the payload. All
//! numbers are little-endian and reals are stored as raw `f64` bits, so a
//! decode/encode cycle reproduces the input bytes exactly.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_header(magic: &[u8; 8]) -> Self {
        let mut w = Self::new();
        w.buf.extend_from_slice(magic);
        w.u32(FORMAT_VERSION);
        w
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.write_u32::<LittleEndian>(v).expect("vec write");
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.write_u64::<LittleEndian>(v).expect("vec write");
    }

    pub fn len(&mut self, v: usize) {
        self.u64(v as u64);
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.write_f64::<LittleEndian>(v).expect("vec write");
    }

    pub fn f64s(&mut self, v: &[f64]) {
        self.len(v.len());
        v.iter().for_each(|&x| self.f64(x));
    }

    pub fn u16s(&mut self, v: &[u16]) {
        self.len(v.len());
        for &x in v {
            self.buf.write_u16::<LittleEndian>(x).expect("vec write");
        }
    }

    pub fn u32s(&mut self, v: &[u32]) {
        self.len(v.len());
        v.iter().for_each(|&x| self.u32(x));
    }

    pub fn str(&mut self, s: &str) {
        self.len(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.len(b.len());
        self.buf.extend_from_slice(b);
    }
}

pub struct ByteReader<'a> {
    cur: Cursor<&'a [u8]>,
}

fn truncated(e: std::io::Error) -> Error {
    Error::Format(format!("truncated model data ({e})"))
}

impl<'a> ByteReader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self {
            cur: Cursor::new(data),
        }
    }

    /// Check magic and version, leaving the reader at the payload.
    pub fn with_header(data: &'a [u8], magic: &[u8; 8]) -> Result<Self> {
        let mut r = Self::new(data);
        let mut m = [0u8; 8];
        r.cur.read_exact(&mut m).map_err(truncated)?;
        if &m != magic {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&m),
                String::from_utf8_lossy(magic)
            )));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::ModelCompatibility(format!(
                "format version {version}, this build reads {FORMAT_VERSION}"
            )));
        }
        Ok(r)
    }

    pub fn is_empty(&self) -> bool {
        self.cur.position() as usize == self.cur.get_ref().len()
    }

    pub fn finish(self) -> Result<()> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(Error::Format("trailing bytes after model payload".into()))
        }
    }

    pub fn u8(&mut self) -> Result<u8> {
        self.cur.read_u8().map_err(truncated)
    }

    pub fn u32(&mut self) -> Result<u32> {
        self.cur.read_u32::<LittleEndian>().map_err(truncated)
    }

    pub fn u64(&mut self) -> Result<u64> {
        self.cur.read_u64::<LittleEndian>().map_err(truncated)
    }

    pub fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        let remaining = self.cur.get_ref().len() as u64 - self.cur.position();
        // every element takes at least one byte
        if n > remaining {
            return Err(Error::Format(format!(
                "length {n} exceeds remaining {remaining} bytes"
            )));
        }
        Ok(n as usize)
    }

    pub fn f64(&mut self) -> Result<f64> {
        self.cur.read_f64::<LittleEndian>().map_err(truncated)
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn u16s(&mut self) -> Result<Vec<u16>> {
        let n = self.len()?;
        (0..n)
            .map(|_| self.cur.read_u16::<LittleEndian>().map_err(truncated))
            .collect()
    }

    pub fn u32s(&mut self) -> Result<Vec<u32>> {
        let n = self.len()?;
        (0..n).map(|_| self.u32()).collect()
    }

    pub fn str(&mut self) -> Result<String> {
        let b = self.bytes()?;
        String::from_utf8(b).map_err(|e| Error::Format(format!("invalid utf-8: {e}")))
    }

    pub fn bytes(&mut self) -> Result<Vec<u8>> {
        let n = self.len()?;
        let mut b = vec![0u8; n];
        self.cur.read_exact(&mut b).map_err(truncated)?;
        Ok(b)
    }
}

/// Implemented by every artifact that can stand alone as a model file.
pub trait ModelFile: Sized {
    const MAGIC: &'static [u8; 8];

    fn encode_body(&self, w: &mut ByteWriter);
    fn decode_body(r: &mut ByteReader<'_>) -> Result<Self>;

    fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::with_header(Self::MAGIC);
        self.encode_body(&mut w);
        w.into_bytes()
    }

    fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = ByteReader::with_header(data, Self::MAGIC)?;
        let v = Self::decode_body(&mut r)?;
        r.finish()?;
        Ok(v)
    }

    fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitives_round_trip() {
        let mut w = ByteWriter::with_header(b"TESTMAGC");
        w.f64s(&[1.5, -0.0, f64::MIN_POSITIVE]);
        w.u16s(&[1, 65535]);
        w.str("hello");
        w.u8(7);
        let bytes = w.into_bytes();
        let mut r = ByteReader::with_header(&bytes, b"TESTMAGC").unwrap();
        assert_eq!(r.f64s().unwrap(), vec![1.5, -0.0, f64::MIN_POSITIVE]);
        assert_eq!(r.u16s().unwrap(), vec![1, 65535]);
        assert_eq!(r.str().unwrap(), "hello");
        assert_eq!(r.u8().unwrap(), 7);
        r.finish().unwrap();
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        let mut w = ByteWriter::with_header(b"TESTMAGC");
        w.f64s(&[1.0, 2.0]);
        let bytes = w.into_bytes();
        assert!(ByteReader::with_header(&bytes, b"OTHERMAG").is_err());
        let mut r = ByteReader::with_header(&bytes[..bytes.len() - 3], b"TESTMAGC").unwrap();
        assert!(r.f64s().is_err());
    }
}
