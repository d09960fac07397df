//! Little-endian binary framing shared by every file format in the crate.
//!
//! Every file starts with a 4-byte magic, a `u32` version and a `u32` record
//! count. The reader tracks its byte offset so that decoding failures can be
//! reported with the position where they happened.

use std::io::{self, Read, Write};

use thiserror::Error;

pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("malformed header at byte {offset}: {reason}")]
    MalformedHeader { offset: u64, reason: String },
    #[error("dimension mismatch at byte {offset}: {field} expected {expected}, found {found}")]
    DimensionMismatch {
        offset: u64,
        field: String,
        expected: u64,
        found: u64,
    },
    #[error("truncated file at byte {offset}: needed {needed} more bytes")]
    Truncated { offset: u64, needed: usize },
    #[error("invalid record at byte {offset}: {reason}")]
    InvalidRecord { offset: u64, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub struct BinWriter<W: Write> {
    inner: W,
}

impl<W: Write> BinWriter<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }

    pub fn header(&mut self, magic: &[u8; 4], count: u32) -> io::Result<()> {
        self.inner.write_all(magic)?;
        self.u32(VERSION)?;
        self.u32(count)
    }

    pub fn u8(&mut self, v: u8) -> io::Result<()> {
        self.inner.write_all(&[v])
    }

    pub fn u32(&mut self, v: u32) -> io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn i32(&mut self, v: i32) -> io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn f32(&mut self, v: f32) -> io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn f32s(&mut self, vs: &[f32]) -> io::Result<()> {
        let mut buf = Vec::with_capacity(vs.len() * 4);
        for v in vs {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.inner.write_all(&buf)
    }

    pub fn str(&mut self, s: &str) -> io::Result<()> {
        self.u32(s.len() as u32)?;
        self.inner.write_all(s.as_bytes())
    }

    pub fn bytes(&mut self, b: &[u8]) -> io::Result<()> {
        self.u32(b.len() as u32)?;
        self.inner.write_all(b)
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

pub struct BinReader<R: Read> {
    inner: R,
    offset: u64,
}

impl<R: Read> BinReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    fn fill(&mut self, buf: &mut [u8]) -> Result<(), FormatError> {
        let mut read = 0;
        while read < buf.len() {
            match self.inner.read(&mut buf[read..]) {
                Ok(0) => {
                    return Err(FormatError::Truncated {
                        offset: self.offset + read as u64,
                        needed: buf.len() - read,
                    })
                }
                Ok(n) => read += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.offset += buf.len() as u64;
        Ok(())
    }

    /// Reads the common header and returns the record count.
    pub fn header(&mut self, magic: &[u8; 4]) -> Result<u32, FormatError> {
        let mut m = [0u8; 4];
        self.fill(&mut m).map_err(|e| match e {
            FormatError::Truncated { offset, .. } => FormatError::MalformedHeader {
                offset,
                reason: "file shorter than magic".into(),
            },
            other => other,
        })?;
        if &m != magic {
            return Err(FormatError::MalformedHeader {
                offset: 0,
                reason: format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(&m),
                    String::from_utf8_lossy(magic)
                ),
            });
        }
        let at = self.offset;
        let version = self.u32()?;
        if version != VERSION {
            return Err(FormatError::MalformedHeader {
                offset: at,
                reason: format!("unsupported version {version}"),
            });
        }
        self.u32()
    }

    pub fn u8(&mut self) -> Result<u8, FormatError> {
        let mut b = [0u8; 1];
        self.fill(&mut b)?;
        Ok(b[0])
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        let mut b = [0u8; 4];
        self.fill(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn i32(&mut self) -> Result<i32, FormatError> {
        let mut b = [0u8; 4];
        self.fill(&mut b)?;
        Ok(i32::from_le_bytes(b))
    }

    pub fn f32(&mut self) -> Result<f32, FormatError> {
        let mut b = [0u8; 4];
        self.fill(&mut b)?;
        Ok(f32::from_le_bytes(b))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>, FormatError> {
        let mut buf = vec![0u8; n * 4];
        self.fill(&mut buf)?;
        Ok(buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub fn bytes(&mut self) -> Result<Vec<u8>, FormatError> {
        let n = self.u32()? as usize;
        let mut buf = vec![0u8; n];
        self.fill(&mut buf)?;
        Ok(buf)
    }

    pub fn str(&mut self) -> Result<String, FormatError> {
        let at = self.offset;
        let b = self.bytes()?;
        String::from_utf8(b).map_err(|_| FormatError::InvalidRecord {
            offset: at,
            reason: "string is not utf-8".into(),
        })
    }

    /// Fails unless the stream is exhausted.
    pub fn expect_eof(&mut self) -> Result<(), FormatError> {
        let mut b = [0u8; 1];
        match self.inner.read(&mut b)? {
            0 => Ok(()),
            _ => Err(FormatError::InvalidRecord {
                offset: self.offset,
                reason: "trailing bytes after last record".into(),
            }),
        }
    }
}
