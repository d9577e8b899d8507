//! Versioned binary container for trained models.
//!
//! ```text
//! magic      8 bytes  "MEMOTION"
//! version    u32 LE
//! kind       u8
//! length     u64 LE   payload byte count
//! payload    length bytes
//! checksum   32 bytes SHA-256 of everything above
//! ```
//!
//! Payload fields are written with [`Encoder`]: integers as u64 LE, reals as
//! f64 LE, strings and sequences length-prefixed. Encoding is canonical, so
//! load followed by save reproduces a file byte for byte.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MEMOTION";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 1 + 8;
const CHECKSUM_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ModelKind {
    Mlp = 1,
    NaiveBayes = 2,
    FfnnW2v = 3,
    FfnnBow = 4,
    CnnHsv = 5,
    Fusion = 6,
}

impl ModelKind {
    fn from_tag(tag: u8) -> Option<Self> {
        use ModelKind::*;
        [Mlp, NaiveBayes, FfnnW2v, FfnnBow, CnnHsv, Fusion]
            .into_iter()
            .find(|k| *k as u8 == tag)
    }
}

/// Serializes a payload and frames it.
pub fn seal(kind: ModelKind, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + CHECKSUM_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(kind as u8);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

/// Validates framing and checksum, returning the kind and payload.
pub fn open(bytes: &[u8]) -> Result<(ModelKind, &[u8])> {
    if bytes.len() < HEADER_LEN + CHECKSUM_LEN || &bytes[..8] != MAGIC {
        return Err(Error::Format("not a model file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "model file version {version} is not supported (expected {FORMAT_VERSION})"
        )));
    }
    let kind = ModelKind::from_tag(bytes[12])
        .ok_or_else(|| Error::Format(format!("unknown model kind tag {}", bytes[12])))?;
    let len = u64::from_le_bytes(bytes[13..21].try_into().unwrap()) as usize;
    if bytes.len() != HEADER_LEN + len + CHECKSUM_LEN {
        return Err(Error::Format(format!(
            "model file is {} bytes, header implies {}",
            bytes.len(),
            HEADER_LEN + len + CHECKSUM_LEN
        )));
    }
    let (body, checksum) = bytes.split_at(HEADER_LEN + len);
    if Sha256::digest(body).as_slice() != checksum {
        return Err(Error::Format("model file checksum mismatch".into()));
    }
    Ok((kind, &body[HEADER_LEN..]))
}

pub fn open_expecting(bytes: &[u8], expected: ModelKind) -> Result<&[u8]> {
    let (kind, payload) = open(bytes)?;
    if kind != expected {
        return Err(Error::Format(format!("expected a {expected:?} model, found {kind:?}")));
    }
    Ok(payload)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn usize(&mut self, v: usize) -> &mut Self {
        self.u64(v as u64)
    }

    pub fn bool(&mut self, v: bool) -> &mut Self {
        self.buf.push(u8::from(v));
        self
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f64s(&mut self, v: &[f64]) -> &mut Self {
        self.usize(v.len());
        for &x in v {
            self.f64(x);
        }
        self
    }

    pub fn usizes(&mut self, v: &[usize]) -> &mut Self {
        self.usize(v.len());
        for &x in v {
            self.usize(x);
        }
        self
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.usize(s.len());
        self.buf.extend_from_slice(s.as_bytes());
        self
    }

    pub fn strs<'a>(&mut self, items: impl ExactSizeIterator<Item = &'a str>) -> &mut Self {
        self.usize(items.len());
        for s in items {
            self.str(s);
        }
        self
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.usize(b.len());
        self.buf.extend_from_slice(b);
        self
    }
}

#[derive(Debug)]
pub struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Decoder { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("model payload truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("length overflows usize".into()))
    }

    /// A length prefix, sanity-checked against the bytes left.
    fn len(&mut self, elem_size: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.saturating_mul(elem_size) > self.buf.len() - self.pos {
            return Err(Error::Format(format!("length {n} exceeds remaining payload")));
        }
        Ok(n)
    }

    pub fn bool(&mut self) -> Result<bool> {
        match self.take(1)?[0] {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::Format(format!("bad boolean byte {b}"))),
        }
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn usizes(&mut self) -> Result<Vec<usize>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.usize()).collect()
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.len(1)?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format("string field is not UTF-8".into()))
    }

    pub fn strs(&mut self) -> Result<Vec<String>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.str()).collect()
    }

    pub fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len(1)?;
        self.take(n)
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{} unread bytes at end of model payload",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seal_open_and_tamper() {
        let mut e = Encoder::new();
        e.str("hello").f64s(&[1.5, -0.0]).bool(true).usizes(&[3, 4]);
        let payload = e.finish();
        let file = seal(ModelKind::NaiveBayes, &payload);
        let (kind, got) = open(&file).unwrap();
        assert_eq!(kind, ModelKind::NaiveBayes);
        let mut d = Decoder::new(got);
        assert_eq!(d.str().unwrap(), "hello");
        assert_eq!(d.f64s().unwrap(), [1.5, -0.0]);
        assert!(d.bool().unwrap());
        assert_eq!(d.usizes().unwrap(), [3, 4]);
        d.finish().unwrap();

        let mut bad = file.clone();
        let mid = bad.len() / 2;
        bad[mid] ^= 1;
        assert!(open(&bad).unwrap_err().to_string().contains("checksum"));
        assert!(open(&file[..file.len() - 1]).is_err());
        assert!(open_expecting(&file, ModelKind::Mlp).is_err());
    }

    #[test]
    fn decoder_rejects_truncation_and_leftovers() {
        let mut e = Encoder::new();
        e.f64s(&[1.0, 2.0]);
        let bytes = e.finish();
        assert!(Decoder::new(&bytes[..bytes.len() - 3]).f64s().is_err());
        let mut d = Decoder::new(&bytes);
        d.usize().unwrap();
        assert!(d.finish().is_err());
    }
}
