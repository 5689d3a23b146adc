//! Shared pieces of the on-disk formats.
//!
//! Every format starts with a short ASCII header, one `key value` record per
//! line, terminated by an `end_header` line. The first line is
//! `<MAGIC> <version>`. A little-endian binary body follows the header.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub(crate) const END_HEADER: &str = "end_header";

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Cursor over a header + body byte buffer that reports byte offsets.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn error(&self, at: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            offset: at as u64,
            message: message.into(),
        }
    }

    /// Next header line (without the newline) and its starting offset.
    pub fn line(&mut self) -> Result<(usize, &'a str)> {
        let start = self.pos;
        let rest = &self.bytes[start..];
        let len = rest
            .iter()
            .take(4096)
            .position(|&b| b == b'\n')
            .ok_or_else(|| self.error(start, "unterminated header line"))?;
        let text = std::str::from_utf8(&rest[..len])
            .map_err(|_| self.error(start, "header line is not valid UTF-8"))?;
        self.pos = start + len + 1;
        Ok((start, text))
    }

    /// Checks the `<MAGIC> <version>` line.
    pub fn magic(&mut self, magic: &str, supported: u32) -> Result<()> {
        let (at, line) = self.line()?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(magic) {
            return Err(self.error(at, format!("expected {magic} magic")));
        }
        let version: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| self.error(at, "missing format version"))?;
        if version != supported {
            return Err(self.error(
                at,
                format!("unsupported {magic} version {version} (reader supports {supported})"),
            ));
        }
        Ok(())
    }

    /// Reads a `key value...` line, returning the remainder after the key.
    pub fn field(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (at, line) = self.line()?;
        match line.split_once(' ') {
            Some((k, rest)) if k == key => Ok((at, rest.trim())),
            _ if line == key => Ok((at, "")),
            _ => Err(self.error(at, format!("expected `{key}` record, found {line:?}"))),
        }
    }

    pub fn number<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let (at, value) = self.field(key)?;
        value
            .parse()
            .map_err(|_| self.error(at, format!("`{key}` is not a valid number: {value:?}")))
    }

    pub fn end_header(&mut self) -> Result<()> {
        let (at, line) = self.line()?;
        if line != END_HEADER {
            return Err(self.error(at, format!("expected {END_HEADER}, found {line:?}")));
        }
        Ok(())
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let start = self.pos;
        if self.bytes.len() - start < n {
            return Err(self.error(
                start,
                format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - start),
            ));
        }
        self.pos += n;
        Ok(&self.bytes[start..start + n])
    }

    fn byte_len(&self, n: usize, width: usize) -> Result<usize> {
        n.checked_mul(width)
            .ok_or_else(|| self.error(self.pos, format!("element count {n} overflows")))
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.error(
                self.pos,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }

    pub fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(self.byte_len(n, 8)?, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(self.byte_len(n, 4)?, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn u32s(&mut self, n: usize, what: &str) -> Result<Vec<u32>> {
        let raw = self.take(self.byte_len(n, 4)?, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
