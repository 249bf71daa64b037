//! Binary formats (AHUE activation tensors, AHIX memory indexes),
//! JSON-lines manifests and CSV helpers.
//!
//! All integers and floats are little-endian. Decoders report the byte
//! offset of the first problem they find.

mod ahix;
mod ahue;
mod manifest;

use std::path::Path;

pub use ahix::{decode_ahix, encode_ahix, read_ahix, write_ahix, AHIX_MAGIC, AHIX_UNFROZEN, AHIX_VERSION};
pub use ahue::{decode_ahue, encode_ahue, read_ahue, write_ahue, AHUE_MAGIC, AHUE_VERSION};
pub use manifest::{load_images, read_manifest, write_manifest, Manifest, ManifestRecord};

use crate::error::{Error, Result};

/// Float formatting for CSV tables: 17 significant digits, enough to
/// round-trip any f64.
pub fn csv_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Bounds-checked little-endian reader that tracks its offset.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if n > remaining {
            return Err(Error::Truncated {
                offset: self.bytes.len() as u64,
                needed: (n - remaining) as u64,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let offset = self.offset();
        let found: [u8; 4] = self.take(4)?.try_into().expect("4 bytes");
        if found != expected {
            return Err(Error::BadMagic { offset, expected, found });
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| self.corrupt("length overflow"))?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }

    pub fn corrupt(&self, reason: impl Into<String>) -> Error {
        Error::Corrupt {
            offset: self.offset(),
            reason: reason.into(),
        }
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.corrupt(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

pub(crate) fn dim_u32(what: &str, v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidDims(format!("{what} = {v} does not fit in u32")))
}
