use std::io;
use std::path::Path;

/// One write into the file image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WriteRecord {
    pub rank: usize,
    pub offset: u64,
    pub len: u64,
    /// `header`, `index`, or the block path.
    pub label: String,
}

impl WriteRecord {
    pub fn end(&self) -> u64 {
        self.offset + self.len
    }
}

/// In-memory file with a log of who wrote which region.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FileImage {
    pub bytes: Vec<u8>,
    pub log: Vec<WriteRecord>,
}

impl FileImage {
    pub fn write(&mut self, rank: usize, offset: u64, data: &[u8], label: impl Into<String>) {
        let end = offset as usize + data.len();
        if self.bytes.len() < end {
            self.bytes.resize(end, 0);
        }
        self.bytes[offset as usize..end].copy_from_slice(data);
        self.log.push(WriteRecord {
            rank,
            offset,
            len: data.len() as u64,
            label: label.into(),
        });
    }

    /// Zero-extends the image to at least `len` bytes.
    pub fn extend_to(&mut self, len: u64) {
        if (self.bytes.len() as u64) < len {
            self.bytes.resize(len as usize, 0);
        }
    }

    /// Write log sorted by offset.
    pub fn regions(&self) -> Vec<WriteRecord> {
        let mut log = self.log.clone();
        log.sort_by_key(|w| (w.offset, w.len));
        log
    }

    /// Fails if any two writes touch a common byte.
    pub fn verify_disjoint(&self) -> Result<(), String> {
        for pair in self.regions().windows(2) {
            if pair[0].end() > pair[1].offset {
                return Err(format!(
                    "{:?} by rank {} [{}, {}) overlaps {:?} by rank {} at {}",
                    pair[0].label,
                    pair[0].rank,
                    pair[0].offset,
                    pair[0].end(),
                    pair[1].label,
                    pair[1].rank,
                    pair[1].offset
                ));
            }
        }
        Ok(())
    }

    pub fn bytes_written_by(&self, rank: usize) -> u64 {
        self.log.iter().filter(|w| w.rank == rank).map(|w| w.len).sum()
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        std::fs::write(path, &self.bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlapping_writes_are_reported() {
        let mut f = FileImage::default();
        f.write(0, 0, &[1; 8], "index");
        f.write(1, 8, &[2; 4], "a");
        assert!(f.verify_disjoint().is_ok());
        f.write(2, 10, &[3; 4], "b");
        assert!(f.verify_disjoint().unwrap_err().contains("\"a\""));
        assert_eq!(f.bytes.len(), 14);
        assert_eq!(f.bytes_written_by(1), 4);
    }
}
