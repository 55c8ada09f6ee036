//! Partitioned header layout: an index table followed by metadata blocks.
//!
//! ```text
//! index   = 'C' 'D' 'H' 0x01  count:u64  header_reserve:u64  entry*
//! entry   = path_len:u32 path (zero-padded to 4)
//!           offset:u64 size:u64 n_dims:u64 n_vars:u64 n_atts:u64
//! block   = name(path) dim_list gatt_list var_list       (version-5 widths)
//! ```
//!
//! Entries are sorted by path and their `[offset, offset + size)` regions are
//! disjoint. The index occupies the front of the header region and blocks
//! follow it in path order, each aligned. `n_atts` counts the block's global
//! attributes only; variable attributes live inside their variable.

use super::classic::{FormatVersion, Widths};
use super::{padding, CodecError, Reader, Result, Writer};
use crate::model::{round_up, validate_name, Header};

pub const INDEX_MAGIC: [u8; 4] = *b"CDH\x01";

/// Fixed bytes before the first entry.
pub const INDEX_PREFIX_LEN: usize = 4 + 8 + 8;

/// Fixed bytes of an entry after its padded path.
pub const ENTRY_FIXED_LEN: usize = 5 * 8;

const BLOCK_WIDTHS: Widths = Widths::new(8, 8);

/// Path of the block holding objects whose name has no path prefix.
pub const ROOT_BLOCK: &str = "";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    pub block_path: String,
    pub offset: u64,
    pub size: u64,
    pub n_dims: u64,
    pub n_vars: u64,
    pub n_atts: u64,
}

impl IndexEntry {
    pub fn end(&self) -> u64 {
        self.offset + self.size
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IndexTable {
    pub entries: Vec<IndexEntry>,
    pub header_reserve: u64,
}

impl IndexTable {
    pub fn find(&self, path: &str) -> Option<&IndexEntry> {
        self.entries
            .binary_search_by(|e| e.block_path.as_str().cmp(path))
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn total_dims(&self) -> u64 {
        self.entries.iter().map(|e| e.n_dims).sum()
    }

    pub fn total_vars(&self) -> u64 {
        self.entries.iter().map(|e| e.n_vars).sum()
    }

    pub fn total_atts(&self) -> u64 {
        self.entries.iter().map(|e| e.n_atts).sum()
    }
}

/// A metadata block: one path namespace with block-local GIDs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetadataBlock {
    pub block_path: String,
    pub content: Header,
}

/// Size-and-statistics view of a block; enough to lay it out without its content.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSummary {
    pub block_path: String,
    pub encoded_size: u64,
    pub n_dims: u64,
    pub n_vars: u64,
    pub n_atts: u64,
}

impl MetadataBlock {
    pub fn summary(&self) -> BlockSummary {
        BlockSummary {
            block_path: self.block_path.clone(),
            encoded_size: block_len(self) as u64,
            n_dims: self.content.dims.len() as u64,
            n_vars: self.content.vars.len() as u64,
            n_atts: self.content.global_atts.len() as u64,
        }
    }
}

/// Block paths are printable ASCII; the empty path is the root block.
pub fn validate_path(path: &str) -> Result<()> {
    if path == ROOT_BLOCK {
        return Ok(());
    }
    validate_name(path)
}

fn entry_len(path: &str) -> usize {
    4 + path.len() + padding(path.len()) + ENTRY_FIXED_LEN
}

/// Encoded index size for a set of block paths.
pub fn index_len<'a>(paths: impl IntoIterator<Item = &'a str>) -> usize {
    INDEX_PREFIX_LEN + paths.into_iter().map(entry_len).sum::<usize>()
}

/// Encodes the table with its entries in path order.
pub fn encode_index_table(table: &IndexTable) -> Result<Vec<u8>> {
    let mut entries: Vec<&IndexEntry> = table.entries.iter().collect();
    entries.sort_by(|a, b| a.block_path.cmp(&b.block_path));
    for pair in entries.windows(2) {
        if pair[0].block_path == pair[1].block_path {
            return Err(CodecError::DuplicateName(pair[0].block_path.clone()));
        }
    }
    let mut w = Writer {
        buf: Vec::with_capacity(index_len(entries.iter().map(|e| e.block_path.as_str()))),
    };
    w.buf.extend_from_slice(&INDEX_MAGIC);
    w.u64(entries.len() as u64);
    w.u64(table.header_reserve);
    for e in entries {
        validate_path(&e.block_path)?;
        let len = u32::try_from(e.block_path.len())
            .map_err(|_| CodecError::UnrepresentableValue("block path too long".into()))?;
        w.u32(len);
        w.padded(e.block_path.as_bytes());
        w.u64(e.offset);
        w.u64(e.size);
        w.u64(e.n_dims);
        w.u64(e.n_vars);
        w.u64(e.n_atts);
    }
    Ok(w.buf)
}

/// Parsed fixed prefix of an index table: `(entry count, header_reserve)`.
pub fn decode_index_prefix(bytes: &[u8]) -> Result<(u64, u64)> {
    if bytes.len() >= 4 && bytes[..4] != INDEX_MAGIC {
        return Err(CodecError::BadMagic);
    }
    let mut r = Reader::new(bytes);
    let magic = r.take(bytes.len().min(4))?;
    if magic.len() < 4 {
        if !INDEX_MAGIC.starts_with(magic) {
            return Err(CodecError::BadMagic);
        }
        r.take(4 - magic.len())?;
    }
    let count = r.u64()?;
    let reserve = r.u64()?;
    Ok((count, reserve))
}

/// Reads one entry from `r`.
pub(crate) fn read_entry(r: &mut Reader) -> Result<IndexEntry> {
    let len = r.u32()? as usize;
    let path = r.padded(len)?;
    let block_path = String::from_utf8(path.to_vec())
        .map_err(|_| CodecError::InvalidName(String::from_utf8_lossy(path).into_owned()))?;
    validate_path(&block_path)?;
    Ok(IndexEntry {
        block_path,
        offset: r.u64()?,
        size: r.u64()?,
        n_dims: r.u64()?,
        n_vars: r.u64()?,
        n_atts: r.u64()?,
    })
}

/// Checks entry order and region disjointness.
pub fn validate_index(table: &IndexTable) -> Result<()> {
    for pair in table.entries.windows(2) {
        match pair[0].block_path.cmp(&pair[1].block_path) {
            std::cmp::Ordering::Less => {}
            std::cmp::Ordering::Equal => {
                return Err(CodecError::DuplicateName(pair[1].block_path.clone()))
            }
            std::cmp::Ordering::Greater => {
                return Err(CodecError::UnsortedIndex(pair[1].block_path.clone()))
            }
        }
    }
    let mut regions: Vec<&IndexEntry> = table.entries.iter().filter(|e| e.size > 0).collect();
    regions.sort_by_key(|e| e.offset);
    for pair in regions.windows(2) {
        if pair[0].end() > pair[1].offset {
            return Err(CodecError::OverlappingBlocks {
                first: pair[0].block_path.clone(),
                second: pair[1].block_path.clone(),
            });
        }
    }
    Ok(())
}

/// Decodes an index table at the start of `bytes`, returning it and its encoded length.
pub fn decode_index_table_full(bytes: &[u8]) -> Result<(IndexTable, usize)> {
    let (count, header_reserve) = decode_index_prefix(bytes)?;
    let mut r = Reader::new(bytes);
    r.take(INDEX_PREFIX_LEN)?;
    let count = r.count(count, 4 + ENTRY_FIXED_LEN)?;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        entries.push(read_entry(&mut r)?);
    }
    let table = IndexTable {
        entries,
        header_reserve,
    };
    validate_index(&table)?;
    Ok((table, r.pos))
}

pub fn decode_index_table(bytes: &[u8]) -> Result<IndexTable> {
    decode_index_table_full(bytes).map(|(t, _)| t)
}

/// Encoded size of a block.
pub fn block_len(block: &MetadataBlock) -> usize {
    8 + block.block_path.len() + padding(block.block_path.len()) + BLOCK_WIDTHS.lists_len(&block.content)
}

pub fn encode_block(block: &MetadataBlock) -> Result<Vec<u8>> {
    validate_path(&block.block_path)?;
    block.content.validate()?;
    let mut w = Writer {
        buf: Vec::with_capacity(block_len(block)),
    };
    w.u64(block.block_path.len() as u64);
    w.padded(block.block_path.as_bytes());
    BLOCK_WIDTHS.write_lists(&mut w, &block.content)?;
    Ok(w.buf)
}

/// Decodes one block; `bytes` must hold exactly the block.
pub fn decode_block(bytes: &[u8]) -> Result<MetadataBlock> {
    let mut r = Reader::new(bytes);
    let len = r.u64()?;
    let len = r.count(len, 1)?;
    let raw = r.padded(len)?;
    let block_path = String::from_utf8(raw.to_vec())
        .map_err(|_| CodecError::InvalidName(String::from_utf8_lossy(raw).into_owned()))?;
    validate_path(&block_path)?;
    let content = BLOCK_WIDTHS.read_lists(&mut r)?;
    if r.pos != bytes.len() {
        return Err(CodecError::Malformed(format!(
            "{} trailing bytes after block {:?}",
            bytes.len() - r.pos,
            block_path
        )));
    }
    Ok(MetadataBlock { block_path, content })
}

/// Assigns block offsets after the index, in path order, each aligned to `align`.
pub fn layout_summaries(summaries: &[BlockSummary], align: u64) -> IndexTable {
    assert!(align > 0, "alignment must be positive");
    let mut sorted: Vec<&BlockSummary> = summaries.iter().collect();
    sorted.sort_by(|a, b| a.block_path.cmp(&b.block_path));
    let mut next = round_up(
        index_len(sorted.iter().map(|s| s.block_path.as_str())) as u64,
        align,
    );
    let entries = sorted
        .into_iter()
        .map(|s| {
            let entry = IndexEntry {
                block_path: s.block_path.clone(),
                offset: next,
                size: s.encoded_size,
                n_dims: s.n_dims,
                n_vars: s.n_vars,
                n_atts: s.n_atts,
            };
            next = round_up(next + s.encoded_size, align);
            entry
        })
        .collect();
    IndexTable {
        entries,
        header_reserve: next,
    }
}

pub fn layout_blocks(blocks: &[MetadataBlock], align: u64) -> IndexTable {
    let summaries: Vec<BlockSummary> = blocks.iter().map(MetadataBlock::summary).collect();
    layout_summaries(&summaries, align)
}

/// Fills data offsets of every block: data starts at the header reserve and
/// follows block path order, then variable order inside each block.
pub fn assign_block_data_offsets(blocks: &mut [MetadataBlock], header_reserve: u64) -> Result<u64> {
    let mut order: Vec<usize> = (0..blocks.len()).collect();
    order.sort_by(|&a, &b| blocks[a].block_path.cmp(&blocks[b].block_path));
    let mut next = header_reserve;
    for i in order {
        next = super::classic::assign_data_offsets(&mut blocks[i].content, next)?;
    }
    Ok(next)
}

/// A complete partitioned header image: index table plus blocks.
pub fn encode_image(blocks: &[MetadataBlock], align: u64) -> Result<(IndexTable, Vec<u8>)> {
    let mut blocks = blocks.to_vec();
    let table = layout_blocks(&blocks, align);
    assign_block_data_offsets(&mut blocks, table.header_reserve)?;
    let mut image = vec![0u8; table.header_reserve as usize];
    let index = encode_index_table(&table)?;
    image[..index.len()].copy_from_slice(&index);
    for block in &blocks {
        let entry = table.find(&block.block_path).expect("laid-out block");
        let bytes = encode_block(block)?;
        image[entry.offset as usize..entry.end() as usize].copy_from_slice(&bytes);
    }
    Ok((table, image))
}

/// Decodes every block of an image and checks it against its index entry.
pub fn decode_image(image: &[u8]) -> Result<(IndexTable, Vec<MetadataBlock>)> {
    let table = decode_index_table(image)?;
    let blocks = table
        .entries
        .iter()
        .map(|e| read_indexed_block(image, e))
        .collect::<Result<Vec<_>>>()?;
    Ok((table, blocks))
}

/// Decodes the block `entry` refers to and validates its path and counts.
pub fn read_indexed_block(image: &[u8], entry: &IndexEntry) -> Result<MetadataBlock> {
    let start = entry.offset as usize;
    let end = entry.end() as usize;
    if end > image.len() {
        return Err(CodecError::Truncated {
            at: image.len(),
            needed: end - image.len(),
        });
    }
    let block = decode_block(&image[start..end])?;
    check_entry(entry, &block)?;
    Ok(block)
}

pub fn check_entry(entry: &IndexEntry, block: &MetadataBlock) -> Result<()> {
    if block.block_path != entry.block_path {
        return Err(CodecError::Malformed(format!(
            "index entry {:?} points at block {:?}",
            entry.block_path, block.block_path
        )));
    }
    let s = block.summary();
    if (s.n_dims, s.n_vars, s.n_atts) != (entry.n_dims, entry.n_vars, entry.n_atts) {
        return Err(CodecError::Malformed(format!(
            "index counts for block {:?} disagree with its content",
            entry.block_path
        )));
    }
    Ok(())
}

/// Classic version whose field widths match block contents.
pub const BLOCK_VERSION: FormatVersion = FormatVersion::Cdf5;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DimensionDef, NcType, VariableDef};

    fn entry(path: &str, offset: u64, size: u64) -> IndexEntry {
        IndexEntry {
            block_path: path.into(),
            offset,
            size,
            n_dims: 1,
            n_vars: 2,
            n_atts: 0,
        }
    }

    #[test]
    fn empty_table_bytes() {
        let bytes = encode_index_table(&IndexTable::default()).unwrap();
        let mut expected = INDEX_MAGIC.to_vec();
        expected.extend([0u8; 16]);
        assert_eq!(bytes, expected);
        assert_eq!(decode_index_table(&bytes).unwrap(), IndexTable::default());
    }

    #[test]
    fn entries_encoded_in_path_order() {
        let table = IndexTable {
            entries: vec![entry("c", 300, 10), entry("a", 100, 10), entry("b", 200, 10)],
            header_reserve: 400,
        };
        let decoded = decode_index_table(&encode_index_table(&table).unwrap()).unwrap();
        let paths: Vec<_> = decoded.entries.iter().map(|e| e.block_path.as_str()).collect();
        assert_eq!(paths, ["a", "b", "c"]);
        assert_eq!(decoded.header_reserve, 400);
    }

    #[test]
    fn overlapping_regions_rejected() {
        let table = IndexTable {
            entries: vec![entry("a", 100, 50), entry("b", 120, 10)],
            header_reserve: 200,
        };
        let bytes = encode_index_table(&table).unwrap();
        assert!(matches!(
            decode_index_table(&bytes),
            Err(CodecError::OverlappingBlocks { .. })
        ));
    }

    #[test]
    fn unsorted_index_rejected() {
        let table = IndexTable {
            entries: vec![entry("a", 100, 10), entry("b", 200, 10)],
            header_reserve: 300,
        };
        let mut bytes = encode_index_table(&table).unwrap();
        // swap the one-byte paths in place
        let first = INDEX_PREFIX_LEN + 4;
        let second = first + 4 + ENTRY_FIXED_LEN + 4;
        bytes[first] = b'b';
        bytes[second] = b'a';
        assert_eq!(decode_index_table(&bytes), Err(CodecError::UnsortedIndex("a".into())));
    }

    #[test]
    fn classic_magic_is_not_an_index() {
        let classic = crate::codec::classic::encode_classic(&Header::default(), FormatVersion::Cdf5).unwrap();
        assert_eq!(decode_index_table(&classic), Err(CodecError::BadMagic));
    }

    #[test]
    fn block_with_one_dim_has_hand_counted_size() {
        let block = MetadataBlock {
            block_path: "proc00001".into(),
            content: Header {
                dims: vec![DimensionDef { name: "x".into(), len: 4 }],
                ..Default::default()
            },
        };
        let bytes = encode_block(&block).unwrap();
        // path: 8 + 12 ("proc00001" padded); dim list: 4 + 8 + (8 + 4 + 8); two ABSENT: 2 * 12
        let hand = (8 + 12) + (4 + 8 + 8 + 4 + 8) + 2 * 12;
        assert_eq!(bytes.len(), hand);
        assert_eq!(block_len(&block), hand);
        assert_eq!(decode_block(&bytes).unwrap(), block);
    }

    #[test]
    fn dangling_dim_ref_in_block() {
        let block = MetadataBlock {
            block_path: "b".into(),
            content: Header {
                dims: vec![DimensionDef { name: "x".into(), len: 4 }],
                global_atts: vec![],
                vars: vec![VariableDef {
                    name: "v".into(),
                    dim_ids: vec![0],
                    nc_type: NcType::Float,
                    attrs: vec![],
                    begin: 0,
                    vsize: 16,
                }],
            },
        };
        let mut bytes = encode_block(&block).unwrap();
        // dimid is the 8 bytes after the variable's ndims field
        let name_at = bytes.windows(4).rposition(|w| w == b"v\0\0\0").unwrap();
        let dimid_at = name_at + 4 + 8;
        bytes[dimid_at + 7] = 3;
        assert!(matches!(decode_block(&bytes), Err(CodecError::DanglingDimRef { .. })));
    }

    #[test]
    fn layout_single_block() {
        let s = BlockSummary {
            block_path: ROOT_BLOCK.into(),
            encoded_size: 100,
            n_dims: 0,
            n_vars: 0,
            n_atts: 0,
        };
        let index = index_len([ROOT_BLOCK]) as u64;
        assert_eq!(index, 64);
        let table = layout_summaries(&[s], 4);
        assert_eq!(table.entries[0].offset, 64);
        assert_eq!(table.header_reserve, 164);
    }

    #[test]
    fn layout_zero_blocks() {
        let table = layout_summaries(&[], 16);
        assert!(table.entries.is_empty());
        assert_eq!(table.header_reserve, 32); // 20 rounded up to 16
    }

    #[test]
    fn layout_recurrence() {
        let mk = |p: &str, size| BlockSummary {
            block_path: p.into(),
            encoded_size: size,
            n_dims: 0,
            n_vars: 0,
            n_atts: 0,
        };
        let table = layout_summaries(&[mk("b", 10), mk("a", 37)], 8);
        assert_eq!(table.entries[0].block_path, "a");
        assert_eq!(table.entries[1].offset, table.entries[0].offset + 40);
        assert_eq!(table.header_reserve, table.entries[1].offset + 16);
    }
}
