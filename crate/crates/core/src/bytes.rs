//! Little-endian byte packing helpers shared by the binary file formats
//! (weights, checkpoints, NIQE models). Every format is a magic + version
//! header, a payload, and a trailing SHA-256 of all preceding bytes.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub(crate) const CHECKSUM_LEN: usize = 32;

#[derive(Default)]
pub(crate) struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
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

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64_slice(&mut self, vs: &[f64]) {
        self.buf.reserve(vs.len() * 8);
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn bytes(&mut self, vs: &[u8]) {
        self.buf.extend_from_slice(vs);
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    /// Append the checksum of everything written so far and return the buffer.
    pub fn finish_with_checksum(mut self) -> Vec<u8> {
        let digest = Sha256::digest(&self.buf);
        self.buf.extend_from_slice(&digest);
        self.buf
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteReader<'a> {
    /// Verify the trailing checksum, then expose the payload for reading.
    pub fn with_checksum(buf: &'a [u8], path: &'a Path) -> Result<Self> {
        if buf.len() < CHECKSUM_LEN {
            return Err(Error::Format {
                path: path.to_path_buf(),
                detail: "file too short".into(),
            });
        }
        let (payload, stored) = buf.split_at(buf.len() - CHECKSUM_LEN);
        let digest = Sha256::digest(payload);
        if digest.as_slice() != stored {
            return Err(Error::Corrupt {
                path: path.to_path_buf(),
            });
        }
        Ok(Self {
            buf: payload,
            pos: 0,
            path,
        })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format {
                path: self.path.to_path_buf(),
                detail: format!("unexpected end of file at offset {}", self.pos),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
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

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        Ok(self.take(n)?.to_vec())
    }

    pub fn str(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Format {
            path: self.path.to_path_buf(),
            detail: "invalid utf-8 in string field".into(),
        })
    }

    pub fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != magic {
            return Err(Error::Format {
                path: self.path.to_path_buf(),
                detail: format!("bad magic {:02x?}, expected {:02x?}", got, magic),
            });
        }
        Ok(())
    }

    pub fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format {
                path: self.path.to_path_buf(),
                detail: format!(
                    "{} trailing bytes after payload",
                    self.buf.len() - self.pos
                ),
            });
        }
        Ok(())
    }

}

/// Atomic file write: write to a sibling temp file, then rename into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
