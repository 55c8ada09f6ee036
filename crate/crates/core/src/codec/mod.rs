//! On-disk header codecs.
//!
//! [`classic`] implements the classic single-header layout; [`block`]
//! implements the partitioned layout made of an index table followed by
//! independently written metadata blocks. All integers are big-endian.

pub mod block;
pub mod classic;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("bad magic number")]
    BadMagic,
    #[error("input truncated at byte {at}: needed {needed} more bytes")]
    Truncated { at: usize, needed: usize },
    #[error("duplicate name {0:?}")]
    DuplicateName(String),
    #[error("variable {var:?} refers to missing dimension id {dim_id}")]
    DanglingDimRef { var: String, dim_id: u64 },
    #[error("value not representable in this format version: {0}")]
    UnrepresentableValue(String),
    #[error("header reserve {reserve} smaller than encoded header size {needed}")]
    ReserveTooSmall { reserve: u64, needed: u64 },
    #[error("alignment {0} is not a power of two")]
    BadAlignment(u64),
    #[error("invalid name {0:?}")]
    InvalidName(String),
    #[error("malformed header: {0}")]
    Malformed(String),
    #[error("index entries {first:?} and {second:?} overlap")]
    OverlappingBlocks { first: String, second: String },
    #[error("index entries not sorted at {0:?}")]
    UnsortedIndex(String),
}

pub type Result<T> = std::result::Result<T, CodecError>;

pub(crate) const TAG_DIMENSION: u32 = 0x0A;
pub(crate) const TAG_VARIABLE: u32 = 0x0B;
pub(crate) const TAG_ATTRIBUTE: u32 = 0x0C;

pub(crate) fn padding(len: usize) -> usize {
    (4 - len % 4) % 4
}

/// Append-only big-endian writer.
#[derive(Default)]
pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    /// Writes `v` in `width` bytes (4 or 8).
    pub fn uint(&mut self, v: u64, width: usize) {
        if width == 4 {
            self.u32(v as u32)
        } else {
            self.u64(v)
        }
    }

    /// Raw bytes followed by zero padding to a 4-byte boundary.
    pub fn padded(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
        self.buf.extend(std::iter::repeat_n(0u8, padding(bytes.len())));
    }
}

/// Bounds-checked big-endian reader.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let avail = self.buf.len() - self.pos;
        if n > avail {
            return Err(CodecError::Truncated {
                at: self.buf.len(),
                needed: n - avail,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn uint(&mut self, width: usize) -> Result<u64> {
        if width == 4 {
            self.u32().map(u64::from)
        } else {
            self.u64()
        }
    }

    /// Reads `len` bytes plus their padding; padding must be zero.
    pub fn padded(&mut self, len: usize) -> Result<&'a [u8]> {
        let out = self.take(len)?;
        let pad = self.take(padding(len))?;
        if pad.iter().any(|b| *b != 0) {
            return Err(CodecError::Malformed("non-zero padding".into()));
        }
        Ok(out)
    }

    /// Converts a declared count to `usize`, rejecting counts that cannot
    /// possibly fit in the remaining input (each element takes at least
    /// `min_elem` bytes).
    pub fn count(&self, declared: u64, min_elem: usize) -> Result<usize> {
        let remaining = (self.buf.len() - self.pos) as u64;
        if declared.saturating_mul(min_elem as u64) > remaining {
            return Err(CodecError::Truncated {
                at: self.buf.len(),
                needed: (declared.saturating_mul(min_elem as u64) - remaining)
                    .min(usize::MAX as u64) as usize,
            });
        }
        Ok(declared as usize)
    }
}
