//! Little-endian binary helpers shared by the model and checkpoint formats.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Default)]
pub(crate) struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new(magic: &[u8; 4]) -> Self {
        Self {
            buf: magic.to_vec(),
        }
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn usize(&mut self, v: usize) -> &mut Self {
        self.u64(v as u64)
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f64s<'a>(&mut self, values: impl IntoIterator<Item = &'a f64>) -> &mut Self {
        for v in values {
            self.f64(*v);
        }
        self
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: PathBuf,
}

impl<'a> ByteReader<'a> {
    pub fn new(bytes: &'a [u8], magic: &[u8; 4], path: &Path) -> Result<Self> {
        let mut reader = Self {
            bytes,
            pos: 0,
            path: path.to_path_buf(),
        };
        let head = reader.take(4)?;
        if head != magic {
            return Err(reader.error(&format!(
                "expected magic {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(reader)
    }

    pub fn error(&self, message: &str) -> Error {
        Error::Format {
            path: self.path.clone(),
            message: message.to_string(),
        }
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < len {
            return Err(self.error("unexpected end of file"));
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// A count that must fit in the remaining payload at `unit` bytes each.
    pub fn count(&mut self, unit: usize) -> Result<usize> {
        let v = self.u64()?;
        let remaining = (self.bytes.len() - self.pos) as u64;
        if unit > 0 && v > remaining / unit as u64 {
            return Err(self.error("declared length exceeds file size"));
        }
        Ok(v as usize)
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self, len: usize) -> Result<Vec<f64>> {
        let raw = self.take(len.checked_mul(8).ok_or_else(|| self.error("length overflow"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.error("trailing bytes"));
        }
        Ok(())
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => e.into(),
    })
}
