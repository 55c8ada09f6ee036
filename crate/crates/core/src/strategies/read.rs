//! Read paths. A partitioned file is opened by reading only its index table;
//! blocks are fetched and decoded the first time an object in them is needed.

use std::collections::HashMap;

use crate::codec::block::{
    decode_index_prefix, decode_index_table_full, read_indexed_block, IndexTable, MetadataBlock, INDEX_PREFIX_LEN,
};
use crate::codec::classic::decode_classic;
use crate::codec::{padding, CodecError};
use crate::object::{join_full_name, objects_from_header, split_full_name, ObjectDefinition, ObjectKind};
use crate::store::{Gid, Lid, ObjectStore, StoreError};

use super::StrategyError;

/// Open partitioned file with a byte counter over every region it touched.
#[derive(Debug)]
pub struct NewFormatHandle<'a> {
    image: &'a [u8],
    table: IndexTable,
    /// Per-kind GID of the first object of each entry.
    bases: Vec<[u64; 3]>,
    cache: HashMap<usize, MetadataBlock>,
    bytes_read: u64,
}

fn fetch<'a>(image: &'a [u8], offset: usize, len: usize, counter: &mut u64) -> Result<&'a [u8], CodecError> {
    let end = offset.checked_add(len).filter(|&e| e <= image.len()).ok_or(CodecError::Truncated {
        at: image.len(),
        needed: (offset + len).saturating_sub(image.len()),
    })?;
    *counter += len as u64;
    Ok(&image[offset..end])
}

/// Reads the index table entry by entry; nothing past it is touched.
pub fn open_new_format(image: &[u8]) -> Result<NewFormatHandle<'_>, StrategyError> {
    let mut bytes_read = 0;
    let prefix = fetch(image, 0, INDEX_PREFIX_LEN, &mut bytes_read)?;
    let (count, _) = decode_index_prefix(prefix)?;
    let mut raw = prefix.to_vec();
    for _ in 0..count {
        let len_field = fetch(image, raw.len(), 4, &mut bytes_read)?;
        let path_len = u32::from_be_bytes(len_field.try_into().unwrap()) as usize;
        raw.extend_from_slice(len_field);
        let rest = path_len + padding(path_len) + crate::codec::block::ENTRY_FIXED_LEN;
        raw.extend_from_slice(fetch(image, raw.len(), rest, &mut bytes_read)?);
    }
    let (table, used) = decode_index_table_full(&raw)?;
    debug_assert_eq!(used, raw.len());
    let mut bases = Vec::with_capacity(table.entries.len());
    let mut next = [0u64; 3];
    for e in &table.entries {
        bases.push(next);
        next[0] += e.n_dims;
        next[1] += e.n_vars;
        next[2] += e.n_atts;
    }
    Ok(NewFormatHandle {
        image,
        table,
        bases,
        cache: HashMap::new(),
        bytes_read,
    })
}

impl<'a> NewFormatHandle<'a> {
    pub fn table(&self) -> &IndexTable {
        &self.table
    }

    pub fn bytes_read(&self) -> u64 {
        self.bytes_read
    }

    pub fn blocks_decoded(&self) -> usize {
        self.cache.len()
    }

    fn entry_index(&self, path: &str) -> Option<usize> {
        self.table
            .entries
            .binary_search_by(|e| e.block_path.as_str().cmp(path))
            .ok()
    }

    fn load(&mut self, i: usize) -> Result<&MetadataBlock, StrategyError> {
        if !self.cache.contains_key(&i) {
            let entry = &self.table.entries[i];
            let block_err = |source| StrategyError::Block {
                path: entry.block_path.clone(),
                source,
            };
            fetch(self.image, entry.offset as usize, entry.size as usize, &mut self.bytes_read).map_err(block_err)?;
            let block = read_indexed_block(self.image, entry).map_err(block_err)?;
            self.cache.insert(i, block);
        }
        Ok(&self.cache[&i])
    }

    /// Decoded block at `path`, reading it on first use.
    pub fn block(&mut self, path: &str) -> Result<Option<&MetadataBlock>, StrategyError> {
        match self.entry_index(path) {
            Some(i) => self.load(i).map(Some),
            None => Ok(None),
        }
    }

    /// GID and definition of an object, loading only its block.
    pub fn lookup(&mut self, kind: ObjectKind, full_name: &str) -> Result<Option<(Gid, ObjectDefinition)>, StrategyError> {
        let (path, local) = split_full_name(full_name);
        // A root block may hold names containing '/' (files converted from
        // the classic format).
        let (i, path, local) = match (self.entry_index(path), self.entry_index("")) {
            (Some(i), _) => (i, path, local),
            (None, Some(root)) => (root, "", full_name),
            (None, None) => return Ok(None),
        };
        let base = self.bases[i][kind.index()];
        let block = self.load(i)?;
        let c = &block.content;
        let position = match kind {
            ObjectKind::Dimension => c.dims.iter().position(|d| d.name == local),
            ObjectKind::Variable => c.vars.iter().position(|v| v.name == local),
            ObjectKind::Attribute => c.global_atts.iter().position(|a| a.name == local),
        };
        let Some(pos) = position else {
            return Ok(None);
        };
        let def = objects_from_header(c, path)
            .into_iter()
            .find(|o| o.kind() == kind && o.full_name == full_name)
            .expect("object located in its block");
        Ok(Some(((base + pos as u64) as Gid, def)))
    }

    /// Binds `full_name` in `store`, reading its block only if the store has
    /// not seen the name.
    pub fn inquire(&mut self, store: &mut ObjectStore, kind: ObjectKind, full_name: &str) -> Result<Lid, StrategyError> {
        if !store.is_finalized() {
            return Err(StoreError::NotFinalized.into());
        }
        if let Some(lid) = store.lid(kind, full_name) {
            return Ok(lid);
        }
        let found = self.lookup(kind, full_name)?;
        Ok(store.inquire_with(kind, full_name, |_| found.map(|(gid, _)| gid))?)
    }

    /// Every object in file order: blocks in path order, kinds in block order.
    pub fn read_all(&mut self) -> Result<Vec<ObjectDefinition>, StrategyError> {
        let mut out = Vec::new();
        for i in 0..self.table.entries.len() {
            let block = self.load(i)?;
            out.extend(objects_from_header(&block.content, &block.block_path));
        }
        Ok(out)
    }

    /// Object counts from the index alone.
    pub fn totals(&self) -> (u64, u64, u64) {
        (self.table.total_dims(), self.table.total_vars(), self.table.total_atts())
    }

    /// Full name of the object with `gid`, loading the block that holds it.
    pub fn name_of(&mut self, kind: ObjectKind, gid: Gid) -> Result<Option<String>, StrategyError> {
        let (gid, k) = (gid as u64, kind.index());
        let count = |i: usize| {
            let e = &self.table.entries[i];
            [e.n_dims, e.n_vars, e.n_atts][k]
        };
        let Some(i) = (0..self.bases.len()).find(|&i| self.bases[i][k] + count(i) > gid) else {
            return Ok(None);
        };
        let local = (gid - self.bases[i][k]) as usize;
        let block = self.load(i)?;
        let c = &block.content;
        let name = match kind {
            ObjectKind::Dimension => c.dims.get(local).map(|d| d.name.as_str()),
            ObjectKind::Variable => c.vars.get(local).map(|v| v.name.as_str()),
            ObjectKind::Attribute => c.global_atts.get(local).map(|a| a.name.as_str()),
        };
        Ok(name.map(|n| join_full_name(&block.block_path, n)))
    }
}

/// Decodes every block of a partitioned file.
pub fn read_full_header(handle: &mut NewFormatHandle) -> Result<Vec<ObjectDefinition>, StrategyError> {
    handle.read_all()
}

/// Objects of a classic file, names as stored.
pub fn read_classic_objects(image: &[u8]) -> Result<Vec<ObjectDefinition>, StrategyError> {
    Ok(objects_from_header(&decode_classic(image)?, ""))
}
