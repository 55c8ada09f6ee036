//! Benchmark harness and file utilities behind the `parahead` binary.
//!
//! One [`BenchRow`] is produced per (strategy, rank count, trial). Counter
//! columns are deterministic for a given seed; time columns are wall clock.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::block::{decode_image, encode_image, IndexEntry, MetadataBlock, ROOT_BLOCK};
use crate::codec::classic::{decode_classic_full, encode_with_layout, FormatVersion};
use crate::codec::CodecError;
use crate::comm::Schedule;
use crate::model::Header;
use crate::object::{header_from_objects, object_set, objects_from_header};
use crate::strategies::{
    open_new_format, read_classic_objects, read_full_header, run_strategy, Phase, PhaseReport, RunConfig, RunOutput,
    StrategyError, StrategyKind, DEFAULT_ALIGNMENT,
};
use crate::workload::{gen_workload, ConflictInjection, ConflictMode, Dataset, Workload, WorkloadError, WorkloadSpec};

/// CSV header, in column order.
pub const CSV_COLUMNS: [&str; 15] = [
    "strategy",
    "P",
    "seed",
    "t_define_s",
    "t_exchange_s",
    "t_check_s",
    "t_write_s",
    "t_close_s",
    "str_cmp",
    "payload_cmp",
    "comm_bytes",
    "io_write_bytes",
    "io_read_bytes",
    "mem_hw_bytes_max",
    "mem_hw_bytes_sum",
];

/// Longest object name a converted classic file may carry.
pub const MAX_CLASSIC_NAME_LEN: usize = 256;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{strategy} at P={ranks}: {source}")]
    Strategy {
        strategy: StrategyKind,
        ranks: usize,
        source: StrategyError,
    },
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Read(#[from] StrategyError),
    #[error("name {name:?} is {len} bytes; classic names hold at most {max}")]
    NameWidthOverflow { name: String, len: usize, max: usize },
    #[error("input is already in the {0} format")]
    AlreadyInFormat(FileFormat),
    #[error("verification failed: {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub strategy: String,
    #[serde(rename = "P")]
    pub ranks: usize,
    pub seed: u64,
    pub t_define_s: f64,
    pub t_exchange_s: f64,
    pub t_check_s: f64,
    pub t_write_s: f64,
    pub t_close_s: f64,
    pub str_cmp: u64,
    pub payload_cmp: u64,
    pub comm_bytes: u64,
    pub io_write_bytes: u64,
    pub io_read_bytes: u64,
    pub mem_hw_bytes_max: u64,
    pub mem_hw_bytes_sum: u64,
}

impl BenchRow {
    pub fn from_report(report: &PhaseReport, seed: u64) -> Self {
        let t = |p| report.times.get(p).as_secs_f64();
        BenchRow {
            strategy: report.strategy.name().to_string(),
            ranks: report.ranks,
            seed,
            t_define_s: t(Phase::Define),
            t_exchange_s: t(Phase::Exchange),
            t_check_s: t(Phase::Check),
            t_write_s: t(Phase::Write),
            t_close_s: t(Phase::Close),
            str_cmp: report.str_cmp,
            payload_cmp: report.payload_cmp,
            comm_bytes: report.comm_bytes,
            io_write_bytes: report.io_write_bytes,
            io_read_bytes: report.io_read_bytes,
            mem_hw_bytes_max: report.mem_hw_bytes_max,
            mem_hw_bytes_sum: report.mem_hw_bytes_sum,
        }
    }

    /// Identity and counter columns; everything except wall times.
    pub fn counters(&self) -> (String, usize, u64, [u64; 7]) {
        (
            self.strategy.clone(),
            self.ranks,
            self.seed,
            [
                self.str_cmp,
                self.payload_cmp,
                self.comm_bytes,
                self.io_write_bytes,
                self.io_read_bytes,
                self.mem_hw_bytes_max,
                self.mem_hw_bytes_sum,
            ],
        )
    }
}

pub fn write_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(CSV_COLUMNS)?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(input: impl std::io::Read) -> Result<Vec<BenchRow>, csv::Error> {
    csv::Reader::from_reader(input).deserialize().collect()
}

/// `all` or a comma-separated list of strategy names.
pub fn parse_strategies(s: &str) -> Result<Vec<StrategyKind>, String> {
    if s == "all" {
        return Ok(StrategyKind::ALL.to_vec());
    }
    s.split(',').map(|p| p.trim().parse()).collect()
}

pub fn parse_ranks(s: &str) -> Result<Vec<usize>, String> {
    s.split(',')
        .map(|p| match p.trim().parse::<usize>() {
            Ok(0) | Err(_) => Err(format!("invalid rank count {p:?}")),
            Ok(n) => Ok(n),
        })
        .collect()
}

/// `COUNT` or `COUNT:MODE`; the mode defaults to a type mismatch.
pub fn parse_conflicts(s: &str) -> Result<ConflictInjection, String> {
    let (count, mode) = match s.split_once(':') {
        Some((c, m)) => (c, m.parse::<ConflictMode>()?),
        None => (s, ConflictMode::TypeMismatch),
    };
    let count = count
        .parse()
        .map_err(|_| format!("invalid conflict count {count:?}"))?;
    Ok(ConflictInjection { count, mode })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Classic,
    New,
}

impl FileFormat {
    pub fn detect(bytes: &[u8]) -> Result<Self, CodecError> {
        match bytes.get(..3) {
            Some(b"CDF") => Ok(FileFormat::Classic),
            Some(b"CDH") => Ok(FileFormat::New),
            _ => Err(CodecError::BadMagic),
        }
    }
}

impl fmt::Display for FileFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FileFormat::Classic => "classic",
            FileFormat::New => "new",
        })
    }
}

impl FromStr for FileFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "classic" => Ok(FileFormat::Classic),
            "new" => Ok(FileFormat::New),
            _ => Err(format!("unknown format {s:?}; expected classic or new")),
        }
    }
}

/// A strategy × rank-count sweep over one scaled dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchPlan {
    pub strategies: Vec<StrategyKind>,
    pub ranks: Vec<usize>,
    pub dataset: Dataset,
    pub scale: f64,
    pub hash_size: usize,
    pub shared_fraction: f64,
    pub conflicts: Option<ConflictInjection>,
    pub seed: u64,
    pub trials: usize,
    pub schedule: Schedule,
}

impl BenchPlan {
    /// All strategies at P ∈ {1,2,4,8,16} on 1% of `dataset`.
    pub fn new(dataset: Dataset, seed: u64) -> Self {
        BenchPlan {
            strategies: StrategyKind::ALL.to_vec(),
            ranks: vec![1, 2, 4, 8, 16],
            dataset,
            scale: 0.01,
            hash_size: dataset.hash_size(),
            shared_fraction: 0.0,
            conflicts: None,
            seed,
            trials: 1,
            schedule: Schedule::from_env(),
        }
    }

    pub fn spec(&self, ranks: usize) -> WorkloadSpec {
        let mut spec = WorkloadSpec::scaled(self.dataset, self.scale, ranks, self.seed);
        spec.shared_fraction = self.shared_fraction;
        spec.conflicts = self.conflicts;
        spec
    }

    pub fn config(&self) -> RunConfig {
        RunConfig::new(self.hash_size).with_schedule(self.schedule)
    }
}

/// Runs that stopped with the consistency error their injected conflicts call for.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedFailure {
    pub strategy: StrategyKind,
    pub ranks: usize,
    pub conflicts: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct BenchOutcome {
    pub rows: Vec<BenchRow>,
    pub expected_failures: Vec<ExpectedFailure>,
}

/// Rows ordered by rank count, then strategy, then trial.
pub fn run_bench(plan: &BenchPlan) -> Result<BenchOutcome, BenchError> {
    let cfg = plan.config();
    let mut outcome = BenchOutcome::default();
    for &p in &plan.ranks {
        let workload = gen_workload(&plan.spec(p))?;
        for &strategy in &plan.strategies {
            for _ in 0..plan.trials.max(1) {
                match run_strategy(strategy, &workload, &cfg) {
                    Ok(out) => outcome.rows.push(BenchRow::from_report(&out.report, plan.seed)),
                    Err(e) if !workload.injected.is_empty() && injected_only(&e, &workload) => {
                        outcome.expected_failures.push(ExpectedFailure {
                            strategy,
                            ranks: p,
                            conflicts: workload.injected.clone(),
                        });
                        break;
                    }
                    Err(source) => {
                        return Err(BenchError::Strategy {
                            strategy,
                            ranks: p,
                            source,
                        })
                    }
                }
            }
        }
    }
    Ok(outcome)
}

fn injected_only(e: &StrategyError, workload: &Workload) -> bool {
    let mut names = e.conflict_names();
    names.sort_unstable();
    names.dedup();
    matches!(e, StrategyError::Consistency { .. }) && names == workload.injected
}

/// Runs `strategy` on `spec` and returns the written file.
pub fn generate(spec: &WorkloadSpec, strategy: StrategyKind, cfg: &RunConfig) -> Result<RunOutput, BenchError> {
    let workload = gen_workload(spec)?;
    run_strategy(strategy, &workload, cfg).map_err(|source| BenchError::Strategy {
        strategy,
        ranks: spec.ranks,
        source,
    })
}

/// Summary of a file; for the partitioned format only the index is read.
#[derive(Debug, Clone, PartialEq)]
pub enum Inspection {
    Classic {
        version: FormatVersion,
        dims: usize,
        vars: usize,
        global_atts: usize,
        header_bytes: usize,
    },
    New {
        entries: Vec<IndexEntry>,
        header_reserve: u64,
        totals: (u64, u64, u64),
        bytes_read: u64,
    },
}

pub fn inspect(bytes: &[u8]) -> Result<Inspection, BenchError> {
    match FileFormat::detect(bytes)? {
        FileFormat::Classic => {
            let (h, version, used) = decode_classic_full(bytes)?;
            Ok(Inspection::Classic {
                version,
                dims: h.dims.len(),
                vars: h.vars.len(),
                global_atts: h.global_atts.len(),
                header_bytes: used,
            })
        }
        FileFormat::New => {
            let handle = open_new_format(bytes)?;
            Ok(Inspection::New {
                entries: handle.table().entries.clone(),
                header_reserve: handle.table().header_reserve,
                totals: handle.totals(),
                bytes_read: handle.bytes_read(),
            })
        }
    }
}

impl fmt::Display for Inspection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Inspection::Classic {
                version,
                dims,
                vars,
                global_atts,
                header_bytes,
            } => {
                writeln!(f, "format: classic (CDF-{})", version.byte())?;
                writeln!(f, "dims: {dims}")?;
                writeln!(f, "vars: {vars}")?;
                writeln!(f, "global attributes: {global_atts}")?;
                writeln!(f, "header bytes: {header_bytes}")
            }
            Inspection::New {
                entries,
                header_reserve,
                totals,
                bytes_read,
            } => {
                writeln!(f, "format: new (index table + {} blocks)", entries.len())?;
                writeln!(f, "header reserve: {header_reserve}")?;
                for e in entries {
                    let path = if e.block_path.is_empty() { "/" } else { &e.block_path };
                    writeln!(
                        f,
                        "block {path} offset={} size={} dims={} vars={} atts={}",
                        e.offset, e.size, e.n_dims, e.n_vars, e.n_atts
                    )?;
                }
                writeln!(f, "totals: dims={} vars={} atts={}", totals.0, totals.1, totals.2)?;
                writeln!(f, "bytes read: {bytes_read}")
            }
        }
    }
}

/// Converts between formats. Classic files become a single root block;
/// partitioned files become one classic header with full names.
pub fn convert(bytes: &[u8], target: FileFormat, classic_version: FormatVersion) -> Result<Vec<u8>, BenchError> {
    let source = FileFormat::detect(bytes)?;
    if source == target {
        return Err(BenchError::AlreadyInFormat(target));
    }
    match target {
        FileFormat::New => {
            let (header, _, _) = decode_classic_full(bytes)?;
            let blocks = if header == Header::default() {
                vec![]
            } else {
                vec![MetadataBlock {
                    block_path: ROOT_BLOCK.to_string(),
                    content: header,
                }]
            };
            Ok(encode_image(&blocks, DEFAULT_ALIGNMENT)?.1)
        }
        FileFormat::Classic => {
            let (_, blocks) = decode_image(bytes)?;
            let objects: Vec<_> = blocks
                .iter()
                .flat_map(|b| objects_from_header(&b.content, &b.block_path))
                .collect();
            if let Some(o) = objects.iter().find(|o| o.full_name.len() > MAX_CLASSIC_NAME_LEN) {
                return Err(BenchError::NameWidthOverflow {
                    name: o.full_name.clone(),
                    len: o.full_name.len(),
                    max: MAX_CLASSIC_NAME_LEN,
                });
            }
            let header = header_from_objects(&objects, "")?;
            Ok(encode_with_layout(&header, classic_version, DEFAULT_ALIGNMENT)?.1)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub objects: usize,
    pub strategies: Vec<StrategyKind>,
}

/// Runs every strategy on `spec` and checks that the files describe the same
/// objects, that the classic files are byte-identical, and that no file
/// region was written twice.
pub fn verify(spec: &WorkloadSpec, cfg: &RunConfig) -> Result<Verification, BenchError> {
    let workload = gen_workload(spec)?;
    let mut reference = None;
    let mut classic_image: Option<Vec<u8>> = None;
    for strategy in StrategyKind::ALL {
        let out = run_strategy(strategy, &workload, cfg).map_err(|source| BenchError::Strategy {
            strategy,
            ranks: spec.ranks,
            source,
        })?;
        out.image
            .verify_disjoint()
            .map_err(|e| BenchError::Mismatch(format!("{strategy}: {e}")))?;
        let objects = if strategy.writes_classic() {
            match &classic_image {
                Some(img) if *img != out.image.bytes => {
                    return Err(BenchError::Mismatch(format!("{strategy} wrote a different classic file")))
                }
                Some(_) => {}
                None => classic_image = Some(out.image.bytes.clone()),
            }
            read_classic_objects(&out.image.bytes)?
        } else {
            read_full_header(&mut open_new_format(&out.image.bytes)?)?
        };
        let set = object_set(&objects);
        match &reference {
            None => reference = Some(set),
            Some(r) if *r != set => {
                return Err(BenchError::Mismatch(format!("{strategy} wrote a different object set")))
            }
            Some(_) => {}
        }
    }
    Ok(Verification {
        objects: reference.map_or(0, |r| r.len()),
        strategies: StrategyKind::ALL.to_vec(),
    })
}
