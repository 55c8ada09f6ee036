//! End-to-end parallel creation pipelines over simulated ranks.
//!
//! Every pipeline takes a [`Workload`] (per-rank definition lists), runs one
//! thread per rank through the [`Communicator`], and returns the written
//! [`FileImage`] together with per-phase timings and counters.
//!
//! * [`StrategyKind::AppBaseline`]: ranks exchange and check all definitions
//!   first, then every rank defines the full merged set.
//! * [`StrategyKind::LibBaselineHash`] / [`StrategyKind::LibBaselineSort`]:
//!   ranks define only their own objects; end-define gathers everything and
//!   checks it with a hash table or a sort.
//! * [`StrategyKind::NewFormat`]: ranks exchange block summaries only, check
//!   their own objects locally, exchange contents of shared blocks, and write
//!   their own blocks into the partitioned layout.

mod classic;
mod image;
mod partitioned;
mod read;

use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::codec::{CodecError, Reader, Writer};
use crate::comm::{CommError, CommStats, Communicator, RankComm, Schedule};
use crate::consistency::{Conflict, NameRecord};
use crate::object::ObjectKind;
use crate::store::{GlobalOrder, ObjectStore};
use crate::workload::Workload;

pub use image::{FileImage, WriteRecord};
pub use read::{open_new_format, read_classic_objects, read_full_header, NewFormatHandle};

pub use crate::codec::block::IndexTable;

/// Alignment of header sections and blocks.
pub const DEFAULT_ALIGNMENT: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StrategyKind {
    AppBaseline,
    LibBaselineHash,
    LibBaselineSort,
    NewFormat,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::AppBaseline,
        StrategyKind::LibBaselineHash,
        StrategyKind::LibBaselineSort,
        StrategyKind::NewFormat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::AppBaseline => "app_baseline",
            StrategyKind::LibBaselineHash => "lib_baseline_hash",
            StrategyKind::LibBaselineSort => "lib_baseline_sort",
            StrategyKind::NewFormat => "new_format",
        }
    }

    pub fn writes_classic(self) -> bool {
        self != StrategyKind::NewFormat
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "app" | "app_baseline" => Ok(StrategyKind::AppBaseline),
            "lib_hash" | "lib_baseline_hash" => Ok(StrategyKind::LibBaselineHash),
            "lib_sort" | "lib_baseline_sort" => Ok(StrategyKind::LibBaselineSort),
            "new" | "new_format" => Ok(StrategyKind::NewFormat),
            _ => Err(format!(
                "unknown strategy {s:?}; expected app, lib_hash, lib_sort, new or all"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckMethod {
    Hash,
    Sort,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Slots per hash table.
    pub hash_size: usize,
    pub schedule: Schedule,
    pub alignment: u64,
}

impl RunConfig {
    /// Uses the scheduler selected by the environment.
    pub fn new(hash_size: usize) -> Self {
        Self {
            hash_size,
            schedule: Schedule::from_env(),
            alignment: DEFAULT_ALIGNMENT,
        }
    }

    pub fn with_schedule(mut self, schedule: Schedule) -> Self {
        self.schedule = schedule;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Define,
    Exchange,
    Check,
    Write,
    Close,
}

impl Phase {
    pub const ALL: [Phase; 5] = [Phase::Define, Phase::Exchange, Phase::Check, Phase::Write, Phase::Close];
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PhaseTimes([Duration; 5]);

impl PhaseTimes {
    pub fn get(&self, phase: Phase) -> Duration {
        self.0[phase as usize]
    }

    pub fn total(&self) -> Duration {
        self.0.iter().sum()
    }

    fn max(mut self, other: &PhaseTimes) -> Self {
        for (a, b) in self.0.iter_mut().zip(other.0) {
            *a = (*a).max(b);
        }
        self
    }
}

/// Accumulates wall time into the phase currently entered.
struct Clock {
    phase: Phase,
    since: Instant,
    times: PhaseTimes,
}

impl Clock {
    fn start(phase: Phase) -> Self {
        Self {
            phase,
            since: Instant::now(),
            times: PhaseTimes::default(),
        }
    }

    fn enter(&mut self, phase: Phase) {
        let now = Instant::now();
        self.times.0[self.phase as usize] += now - self.since;
        self.phase = phase;
        self.since = now;
    }

    fn finish(mut self) -> PhaseTimes {
        self.enter(self.phase);
        self.times
    }
}

/// Logical memory: serialized metadata bytes a rank holds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MemMeter {
    current: u64,
    high: u64,
}

impl MemMeter {
    pub fn acquire(&mut self, bytes: u64) {
        self.current += bytes;
        self.high = self.high.max(self.current);
    }

    pub fn release(&mut self, bytes: u64) {
        self.current = self.current.saturating_sub(bytes);
    }

    pub fn current(&self) -> u64 {
        self.current
    }

    pub fn high_watermark(&self) -> u64 {
        self.high
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RankReport {
    pub rank: usize,
    pub times: PhaseTimes,
    pub str_cmp: u64,
    pub payload_cmp: u64,
    pub io_write_bytes: u64,
    pub io_read_bytes: u64,
    pub mem_hw_bytes: u64,
}

/// Whole-run report: times and counters are the maximum over ranks, byte
/// totals are summed over ranks.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseReport {
    pub strategy: StrategyKind,
    pub ranks: usize,
    pub times: PhaseTimes,
    pub str_cmp: u64,
    pub payload_cmp: u64,
    /// Bytes received over all collectives and ranks.
    pub comm_bytes: u64,
    pub io_write_bytes: u64,
    pub io_read_bytes: u64,
    pub mem_hw_bytes_max: u64,
    pub mem_hw_bytes_sum: u64,
    pub per_rank: Vec<RankReport>,
    pub comm: CommStats,
}

impl PhaseReport {
    fn aggregate(strategy: StrategyKind, per_rank: Vec<RankReport>, comm: CommStats) -> Self {
        Self {
            strategy,
            ranks: per_rank.len(),
            times: per_rank.iter().fold(PhaseTimes::default(), |t, r| t.max(&r.times)),
            str_cmp: per_rank.iter().map(|r| r.str_cmp).max().unwrap_or(0),
            payload_cmp: per_rank.iter().map(|r| r.payload_cmp).max().unwrap_or(0),
            comm_bytes: comm.total_bytes_received(),
            io_write_bytes: per_rank.iter().map(|r| r.io_write_bytes).sum(),
            io_read_bytes: per_rank.iter().map(|r| r.io_read_bytes).sum(),
            mem_hw_bytes_max: per_rank.iter().map(|r| r.mem_hw_bytes).max().unwrap_or(0),
            mem_hw_bytes_sum: per_rank.iter().map(|r| r.mem_hw_bytes).sum(),
            per_rank,
            comm,
        }
    }

    /// Mean of the per-rank string comparison counts.
    pub fn mean_str_cmp(&self) -> f64 {
        self.per_rank.iter().map(|r| r.str_cmp as f64).sum::<f64>() / self.ranks.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StrategyError {
    #[error("inconsistent metadata reported by {ranks} rank(s): {}", list_conflicts(.conflicts))]
    Consistency { conflicts: Vec<Conflict>, ranks: usize },
    #[error(transparent)]
    Comm(#[from] CommError),
    #[error(transparent)]
    Store(#[from] crate::store::StoreError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("block {path:?}: {source}")]
    Block { path: String, source: CodecError },
    #[error(transparent)]
    Workload(#[from] crate::workload::WorkloadError),
}

fn list_conflicts(conflicts: &[Conflict]) -> String {
    conflicts.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl StrategyError {
    fn consistency(conflicts: Vec<Conflict>) -> Self {
        StrategyError::Consistency { conflicts, ranks: 1 }
    }

    /// Names of the conflicting objects, if this is a consistency error.
    pub fn conflict_names(&self) -> Vec<&str> {
        match self {
            StrategyError::Consistency { conflicts, .. } => conflicts.iter().map(|c| c.full_name.as_str()).collect(),
            _ => vec![],
        }
    }
}

/// How a rank resolves GIDs of objects it did not define.
#[derive(Debug, Clone, PartialEq)]
pub enum GidSource {
    /// Full global order, replicated on every rank.
    Classic(std::sync::Arc<GlobalOrder>),
    /// Replicated index table; block contents are loaded on demand.
    Partitioned(IndexTable),
}

/// State a rank keeps after end-define.
#[derive(Debug)]
pub struct RankOutcome {
    pub store: ObjectStore,
    pub gids: GidSource,
    pub report: RankReport,
}

#[derive(Debug)]
pub struct RunOutput {
    pub image: FileImage,
    pub report: PhaseReport,
    pub ranks: Vec<RankOutcome>,
}

type SharedImage = Mutex<FileImage>;

/// Per-rank bookkeeping shared by the pipelines.
struct RankCtx {
    clock: Clock,
    mem: MemMeter,
    report: RankReport,
}

impl RankCtx {
    fn new(rank: usize) -> Self {
        Self {
            clock: Clock::start(Phase::Define),
            mem: MemMeter::default(),
            report: RankReport {
                rank,
                ..RankReport::default()
            },
        }
    }

    fn write(&mut self, image: &SharedImage, offset: u64, data: &[u8], label: &str) {
        image.lock().unwrap().write(self.report.rank, offset, data, label);
        self.report.io_write_bytes += data.len() as u64;
    }

    fn close(mut self, comm: &mut RankComm) -> Result<RankReport, StrategyError> {
        self.clock.enter(Phase::Close);
        comm.barrier()?;
        self.mem.release(self.mem.current());
        self.report.times = self.clock.finish();
        self.report.mem_hw_bytes = self.mem.high_watermark();
        Ok(self.report)
    }
}

/// Serializes `(kind, name, payload)` records back to back.
fn encode_records<'a>(records: impl IntoIterator<Item = (ObjectKind, &'a str, &'a [u8])>) -> Vec<u8> {
    let mut w = Writer::default();
    for (kind, name, payload) in records {
        w.buf.push(kind.code());
        w.u32(name.len() as u32);
        w.buf.extend_from_slice(name.as_bytes());
        w.u32(payload.len() as u32);
        w.buf.extend_from_slice(payload);
    }
    w.buf
}

/// Decodes every rank's contribution, in rank order.
fn decode_records(gathered: &[Vec<u8>]) -> Result<Vec<NameRecord<'_>>, CodecError> {
    let mut out = Vec::new();
    for (rank, buf) in gathered.iter().enumerate() {
        let mut r = Reader::new(buf);
        while r.pos < buf.len() {
            let code = r.take(1)?[0];
            let kind = ObjectKind::from_code(code)
                .ok_or_else(|| CodecError::Malformed(format!("unknown object kind {code}")))?;
            let n = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(n)?).map_err(|e| CodecError::Malformed(e.to_string()))?;
            let n = r.u32()? as usize;
            out.push(NameRecord::new(kind, name, rank, r.take(n)?));
        }
    }
    Ok(out)
}

fn gathered_len(gathered: &[Vec<u8>]) -> u64 {
    gathered.iter().map(|g| g.len() as u64).sum()
}

/// First occurrence of every `(kind, name)` in rank-major record order, which
/// is the order of (lowest defining rank, creation index). Kinds are
/// concatenated dimensions first.
fn merge_in_global_order<'r, 'a>(records: &'r [NameRecord<'a>]) -> Vec<&'r NameRecord<'a>> {
    let mut seen = std::collections::HashSet::new();
    let mut by_kind: [Vec<&NameRecord>; 3] = Default::default();
    for rec in records {
        if seen.insert((rec.kind, rec.full_name)) {
            by_kind[rec.kind.index()].push(rec);
        }
    }
    by_kind.into_iter().flatten().collect()
}

fn run_ranks<F>(strategy: StrategyKind, workload: &Workload, cfg: &RunConfig, body: F) -> Result<RunOutput, StrategyError>
where
    F: Fn(&mut RankComm, &[crate::object::ObjectDefinition], &SharedImage) -> Result<RankOutcome, StrategyError> + Sync,
{
    let image = SharedImage::default();
    let (results, comm) = Communicator::run(workload.ranks.len(), cfg.schedule, |c| {
        let rank = c.rank();
        body(c, &workload.ranks[rank], &image)
    });
    let ranks = collect(results)?;
    let image = image.into_inner().unwrap();
    let per_rank = ranks.iter().map(|r| r.report.clone()).collect();
    Ok(RunOutput {
        image,
        report: PhaseReport::aggregate(strategy, per_rank, comm),
        ranks,
    })
}

/// Succeeds only if every rank succeeded. A consistency error is reported with
/// the number of ranks that raised it; otherwise the first error that is not a
/// knock-on collective failure wins.
fn collect(results: Vec<Result<RankOutcome, StrategyError>>) -> Result<Vec<RankOutcome>, StrategyError> {
    if results.iter().all(Result::is_ok) {
        return Ok(results.into_iter().map(Result::unwrap).collect());
    }
    let errors: Vec<StrategyError> = results.into_iter().filter_map(Result::err).collect();
    if let Some(StrategyError::Consistency { conflicts, .. }) =
        errors.iter().find(|e| matches!(e, StrategyError::Consistency { .. }))
    {
        let ranks = errors
            .iter()
            .filter(|e| matches!(e, StrategyError::Consistency { conflicts: c, .. } if c == conflicts))
            .count();
        return Err(StrategyError::Consistency {
            conflicts: conflicts.clone(),
            ranks,
        });
    }
    let primary = errors
        .iter()
        .position(|e| !matches!(e, StrategyError::Comm(CommError::CollectiveMisuse(_))))
        .unwrap_or(0);
    Err(errors.into_iter().nth(primary).unwrap())
}

pub fn run_app_baseline(workload: &Workload, cfg: &RunConfig) -> Result<RunOutput, StrategyError> {
    run_ranks(StrategyKind::AppBaseline, workload, cfg, |c, defs, image| {
        classic::app_rank(c, defs, image, cfg)
    })
}

pub fn run_lib_baseline(workload: &Workload, cfg: &RunConfig, check: CheckMethod) -> Result<RunOutput, StrategyError> {
    let kind = match check {
        CheckMethod::Hash => StrategyKind::LibBaselineHash,
        CheckMethod::Sort => StrategyKind::LibBaselineSort,
    };
    run_ranks(kind, workload, cfg, |c, defs, image| {
        classic::lib_rank(c, defs, image, cfg, check)
    })
}

pub fn run_new_format(workload: &Workload, cfg: &RunConfig) -> Result<RunOutput, StrategyError> {
    run_ranks(StrategyKind::NewFormat, workload, cfg, |c, defs, image| {
        partitioned::new_format_rank(c, defs, image, cfg)
    })
}

pub fn run_strategy(kind: StrategyKind, workload: &Workload, cfg: &RunConfig) -> Result<RunOutput, StrategyError> {
    match kind {
        StrategyKind::AppBaseline => run_app_baseline(workload, cfg),
        StrategyKind::LibBaselineHash => run_lib_baseline(workload, cfg, CheckMethod::Hash),
        StrategyKind::LibBaselineSort => run_lib_baseline(workload, cfg, CheckMethod::Sort),
        StrategyKind::NewFormat => run_new_format(workload, cfg),
    }
}
