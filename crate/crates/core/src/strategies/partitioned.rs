//! Pipeline that writes the partitioned (index table + blocks) format.

use std::collections::{BTreeMap, HashMap};

use crate::codec::block::{encode_block, encode_index_table, index_len, layout_summaries, BlockSummary, MetadataBlock};
use crate::codec::classic::assign_data_offsets;
use crate::codec::{CodecError, Reader, Writer};
use crate::comm::RankComm;
use crate::consistency::{hash_check, NameRecord};
use crate::model::Header;
use crate::object::{header_from_objects, join_full_name, split_full_name, ObjectDef, ObjectDefinition, ObjectKind};
use crate::store::{Gid, ObjectStore};

use super::{
    decode_records, encode_records, gathered_len, merge_in_global_order, GidSource, Phase, RankCtx, RankOutcome,
    RunConfig, SharedImage, StrategyError,
};

/// A rank's claim on a block: its summary plus the data bytes of its variables.
struct Claim {
    rank: usize,
    summary: BlockSummary,
    data_bytes: u64,
}

/// Same shape as an index entry, with the data size in the offset slot.
fn encode_claims(claims: impl IntoIterator<Item = (BlockSummary, u64)>) -> Vec<u8> {
    let mut w = Writer::default();
    for (s, data_bytes) in claims {
        w.u32(s.block_path.len() as u32);
        w.padded(s.block_path.as_bytes());
        for v in [data_bytes, s.encoded_size, s.n_dims, s.n_vars, s.n_atts] {
            w.u64(v);
        }
    }
    w.buf
}

fn decode_claims(gathered: &[Vec<u8>]) -> Result<Vec<Claim>, CodecError> {
    let mut out = Vec::new();
    for (rank, buf) in gathered.iter().enumerate() {
        let mut r = Reader::new(buf);
        while r.pos < buf.len() {
            let n = r.u32()? as usize;
            let path = String::from_utf8(r.padded(n)?.to_vec()).map_err(|e| CodecError::Malformed(e.to_string()))?;
            let data_bytes = r.u64()?;
            out.push(Claim {
                rank,
                data_bytes,
                summary: BlockSummary {
                    block_path: path,
                    encoded_size: r.u64()?,
                    n_dims: r.u64()?,
                    n_vars: r.u64()?,
                    n_atts: r.u64()?,
                },
            });
        }
    }
    Ok(out)
}

fn build_block(path: &str, objects: &[ObjectDefinition]) -> Result<(MetadataBlock, u64), StrategyError> {
    let content = header_from_objects(objects, path).map_err(|source| StrategyError::Block {
        path: path.to_string(),
        source,
    })?;
    let data = content.data_size()?;
    Ok((
        MetadataBlock {
            block_path: path.to_string(),
            content,
        },
        data,
    ))
}

fn encoded_total<'a>(blocks: impl IntoIterator<Item = &'a (MetadataBlock, u64)>) -> u64 {
    blocks.into_iter().map(|(b, _)| b.summary().encoded_size).sum()
}

fn bind_gids(gids: &mut HashMap<(ObjectKind, String), Gid>, path: &str, content: &Header, base: [u64; 3]) {
    let lists: [Vec<&str>; 3] = [
        content.dims.iter().map(|d| d.name.as_str()).collect(),
        content.vars.iter().map(|v| v.name.as_str()).collect(),
        content.global_atts.iter().map(|a| a.name.as_str()).collect(),
    ];
    for kind in ObjectKind::ALL {
        for (i, local) in lists[kind.index()].iter().enumerate() {
            gids.insert(
                (kind, join_full_name(path, local)),
                (base[kind.index()] + i as u64) as Gid,
            );
        }
    }
}

pub(super) fn new_format_rank(
    comm: &mut RankComm,
    defs: &[ObjectDefinition],
    image: &SharedImage,
    cfg: &RunConfig,
) -> Result<RankOutcome, StrategyError> {
    let rank = comm.rank();
    let mut ctx = RankCtx::new(rank);
    let mut store = ObjectStore::new();
    for obj in defs {
        store.define(obj)?;
    }
    ctx.mem.acquire(store.held_bytes());

    // Own blocks replace the pending definitions as the held form.
    ctx.clock.enter(Phase::Exchange);
    let mut grouped: BTreeMap<&str, Vec<ObjectDefinition>> = BTreeMap::new();
    for o in store.iter() {
        grouped
            .entry(split_full_name(&o.full_name).0)
            .or_default()
            .push(o.to_definition());
    }
    let mut blocks: BTreeMap<String, (MetadataBlock, u64)> = BTreeMap::new();
    for (path, objects) in grouped {
        blocks.insert(path.to_string(), build_block(path, &objects)?);
    }
    ctx.mem.release(store.held_bytes());
    ctx.mem.acquire(encoded_total(blocks.values()));
    let contribution = encode_claims(blocks.values().map(|(b, d)| (b.summary(), *d)));
    let gathered = comm.allgatherv(&contribution)?;
    ctx.mem.acquire(gathered_len(&gathered));

    ctx.clock.enter(Phase::Check);
    let claims = decode_claims(&gathered)?;
    let block_records: Vec<NameRecord> = claims
        .iter()
        .map(|c| NameRecord::new(ObjectKind::Dimension, &c.summary.block_path, c.rank, &[]))
        .collect();
    let block_report = hash_check(&block_records, cfg.hash_size);
    let own_records: Vec<NameRecord> = store
        .iter()
        .map(|o| NameRecord::new(o.kind, &o.full_name, rank, &o.payload))
        .collect();
    let own_report = hash_check(&own_records, cfg.hash_size);
    ctx.report.str_cmp = block_report.string_comparisons + own_report.string_comparisons;
    ctx.report.payload_cmp = own_report.payload_comparisons;
    if !own_report.conflicts.is_empty() {
        return Err(StrategyError::consistency(own_report.conflicts));
    }
    let shared: BTreeMap<String, Vec<usize>> = block_report
        .shared_sets
        .into_iter()
        .map(|s| (s.full_name, s.ranks))
        .collect();

    // Contents of shared blocks go to every rank, which merges and checks them.
    let mut merged_summaries: BTreeMap<String, (BlockSummary, u64)> = BTreeMap::new();
    if !shared.is_empty() {
        ctx.clock.enter(Phase::Exchange);
        let contribution = encode_records(
            store
                .iter()
                .filter(|o| shared.contains_key(split_full_name(&o.full_name).0))
                .map(|o| (o.kind, o.full_name.as_str(), o.payload.as_slice())),
        );
        let gathered = comm.allgatherv(&contribution)?;
        ctx.mem.acquire(gathered_len(&gathered));

        ctx.clock.enter(Phase::Check);
        let records = decode_records(&gathered)?;
        let report = hash_check(&records, cfg.hash_size);
        ctx.report.str_cmp += report.string_comparisons;
        ctx.report.payload_cmp += report.payload_comparisons;
        if !report.conflicts.is_empty() {
            return Err(StrategyError::consistency(report.conflicts));
        }
        let mut per_path: BTreeMap<&str, Vec<ObjectDefinition>> = BTreeMap::new();
        for rec in merge_in_global_order(&records) {
            per_path
                .entry(split_full_name(rec.full_name).0)
                .or_default()
                .push(ObjectDefinition::new(rec.full_name, ObjectDef::from_payload(rec.payload)?));
        }
        for (path, objects) in per_path {
            let merged = build_block(path, &objects)?;
            merged_summaries.insert(path.to_string(), (merged.0.summary(), merged.1));
            if let Some(own) = blocks.get_mut(path) {
                ctx.mem.release(own.0.summary().encoded_size);
                ctx.mem.acquire(merged.0.summary().encoded_size);
                *own = merged;
            }
        }
        ctx.mem.release(gathered_len(&gathered));
    }

    ctx.clock.enter(Phase::Write);
    let mut summaries = Vec::new();
    let mut data_bytes: HashMap<&str, u64> = HashMap::new();
    let mut writer: HashMap<&str, usize> = HashMap::new();
    for c in &claims {
        let path = c.summary.block_path.as_str();
        writer.entry(path).and_modify(|r| *r = (*r).min(c.rank)).or_insert(c.rank);
        if !shared.contains_key(path) {
            summaries.push(c.summary.clone());
            data_bytes.insert(path, c.data_bytes);
        }
    }
    for (path, (summary, data)) in &merged_summaries {
        summaries.push(summary.clone());
        data_bytes.insert(path, *data);
    }
    let table = layout_summaries(&summaries, cfg.alignment);
    // The gathered summaries become the replicated index in place.
    ctx.mem.release(gathered_len(&gathered));
    ctx.mem.acquire(index_len(table.entries.iter().map(|e| e.block_path.as_str())) as u64);

    let mut gids = HashMap::new();
    let mut base = [0u64; 3];
    let mut next_data = table.header_reserve;
    for entry in &table.entries {
        let path = entry.block_path.as_str();
        if let Some((block, _)) = blocks.get_mut(path) {
            assign_data_offsets(&mut block.content, next_data)?;
            bind_gids(&mut gids, path, &block.content, base);
        }
        next_data += data_bytes[path];
        base[0] += entry.n_dims;
        base[1] += entry.n_vars;
        base[2] += entry.n_atts;
    }
    store.finalize_with(|kind, name| gids.get(&(kind, name.to_string())).copied())?;

    if comm.is_root() {
        let index = encode_index_table(&table)?;
        ctx.write(image, 0, &index, "index");
        image.lock().unwrap().extend_to(table.header_reserve);
    }
    for (path, (block, _)) in &blocks {
        if writer[path.as_str()] != rank {
            continue;
        }
        let entry = table.find(path).expect("every claimed block is indexed");
        let bytes = encode_block(block).map_err(|source| StrategyError::Block {
            path: path.clone(),
            source,
        })?;
        if bytes.len() as u64 != entry.size {
            return Err(StrategyError::Block {
                path: path.clone(),
                source: CodecError::Malformed(format!(
                    "encoded {} bytes but the index reserves {}",
                    bytes.len(),
                    entry.size
                )),
            });
        }
        ctx.write(image, entry.offset, &bytes, path);
    }
    let report = ctx.close(comm)?;
    Ok(RankOutcome {
        store,
        gids: GidSource::Partitioned(table),
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn claims_round_trip() {
        let s = BlockSummary {
            block_path: "b00001".into(),
            encoded_size: 76,
            n_dims: 1,
            n_vars: 2,
            n_atts: 3,
        };
        let bytes = encode_claims([(s.clone(), 40)]);
        assert_eq!(bytes.len(), 4 + 8 + 40);
        let claims = decode_claims(&[vec![], bytes]).unwrap();
        assert_eq!(claims.len(), 1);
        assert_eq!((claims[0].rank, claims[0].data_bytes), (1, 40));
        assert_eq!(claims[0].summary, s);
    }
}
