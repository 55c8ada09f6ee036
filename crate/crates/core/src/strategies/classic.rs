//! Pipelines that write the classic single-header format.

use std::sync::Arc;

use crate::codec::classic::{encode_with_layout, FormatVersion};
use crate::comm::RankComm;
use crate::consistency::{hash_check, sort_check, CheckReport, NameRecord};
use crate::object::{header_from_objects, ObjectDef, ObjectDefinition};
use crate::store::{GlobalOrder, ObjectStore};

use super::{
    decode_records, encode_records, gathered_len, merge_in_global_order, CheckMethod, GidSource, Phase, RankCtx,
    RankOutcome, RunConfig, SharedImage, StrategyError,
};

const VERSION: FormatVersion = FormatVersion::Cdf5;

fn check(records: &[NameRecord], cfg: &RunConfig, method: CheckMethod) -> Result<CheckReport, StrategyError> {
    let report = match method {
        CheckMethod::Hash => hash_check(records, cfg.hash_size),
        CheckMethod::Sort => sort_check(records),
    };
    if report.conflicts.is_empty() {
        Ok(report)
    } else {
        Err(StrategyError::consistency(report.conflicts))
    }
}

fn global_order(merged: &[&NameRecord]) -> GlobalOrder {
    let mut order = GlobalOrder::default();
    for rec in merged {
        order.push(rec.kind, rec.full_name.to_string());
    }
    order
}

fn decode_merged(merged: &[&NameRecord]) -> Result<Vec<ObjectDefinition>, StrategyError> {
    merged
        .iter()
        .map(|r| Ok(ObjectDefinition::new(r.full_name, ObjectDef::from_payload(r.payload)?)))
        .collect()
}

/// Root encodes the header of `objects` (already in file order) and writes it.
fn write_header(
    ctx: &mut RankCtx,
    comm: &RankComm,
    image: &SharedImage,
    objects: &[ObjectDefinition],
    cfg: &RunConfig,
) -> Result<(), StrategyError> {
    let header = header_from_objects(objects, "")?;
    let (_, bytes) = encode_with_layout(&header, VERSION, cfg.alignment)?;
    ctx.mem.acquire(bytes.len() as u64);
    if comm.is_root() {
        ctx.write(image, 0, &bytes, "header");
    }
    Ok(())
}

/// Application-level synchronization: every rank learns every definition up
/// front and then defines all of them.
pub(super) fn app_rank(
    comm: &mut RankComm,
    defs: &[ObjectDefinition],
    image: &SharedImage,
    cfg: &RunConfig,
) -> Result<RankOutcome, StrategyError> {
    let mut ctx = RankCtx::new(comm.rank());
    let payloads: Vec<Vec<u8>> = defs.iter().map(|o| o.def.payload()).collect();
    let contribution = encode_records(
        defs.iter()
            .zip(&payloads)
            .map(|(o, p)| (o.kind(), o.full_name.as_str(), p.as_slice())),
    );
    ctx.mem.acquire(contribution.len() as u64);

    ctx.clock.enter(Phase::Exchange);
    let gathered = comm.allgatherv(&contribution)?;
    ctx.mem.acquire(gathered_len(&gathered));

    ctx.clock.enter(Phase::Check);
    let records = decode_records(&gathered)?;
    let report = check(&records, cfg, CheckMethod::Hash)?;
    ctx.report.str_cmp = report.string_comparisons;
    ctx.report.payload_cmp = report.payload_comparisons;
    let merged = merge_in_global_order(&records);
    let order = Arc::new(global_order(&merged));
    let objects = decode_merged(&merged)?;

    ctx.clock.enter(Phase::Define);
    let mut store = ObjectStore::new();
    for obj in &objects {
        store.define(obj)?;
    }
    ctx.mem.acquire(store.held_bytes());
    ctx.mem.release(gathered_len(&gathered) + contribution.len() as u64);
    store.finalize_gids(&order)?;

    ctx.clock.enter(Phase::Write);
    write_header(&mut ctx, comm, image, &objects, cfg)?;
    let report = ctx.close(comm)?;
    Ok(RankOutcome {
        store,
        gids: GidSource::Classic(order),
        report,
    })
}

/// Library-level synchronization at end-define.
pub(super) fn lib_rank(
    comm: &mut RankComm,
    defs: &[ObjectDefinition],
    image: &SharedImage,
    cfg: &RunConfig,
    method: CheckMethod,
) -> Result<RankOutcome, StrategyError> {
    let mut ctx = RankCtx::new(comm.rank());
    let mut store = ObjectStore::new();
    for obj in defs {
        store.define(obj)?;
    }
    ctx.mem.acquire(store.held_bytes());

    ctx.clock.enter(Phase::Exchange);
    let contribution = encode_records(
        store
            .iter()
            .map(|o| (o.kind, o.full_name.as_str(), o.payload.as_slice())),
    );
    let gathered = comm.allgatherv(&contribution)?;
    ctx.mem.acquire(gathered_len(&gathered));

    ctx.clock.enter(Phase::Check);
    let records = decode_records(&gathered)?;
    let report = check(&records, cfg, method)?;
    ctx.report.str_cmp = report.string_comparisons;
    ctx.report.payload_cmp = report.payload_comparisons;

    ctx.clock.enter(Phase::Write);
    let merged = merge_in_global_order(&records);
    let order = Arc::new(global_order(&merged));
    store.finalize_gids(&order)?;
    let objects = decode_merged(&merged)?;
    write_header(&mut ctx, comm, image, &objects, cfg)?;
    ctx.mem.release(gathered_len(&gathered));
    let report = ctx.close(comm)?;
    Ok(RankOutcome {
        store,
        gids: GidSource::Classic(order),
        report,
    })
}
