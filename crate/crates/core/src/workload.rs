//! Synthetic per-rank object definitions.
//!
//! Unique objects are partitioned evenly over the ranks (the first ranks take
//! the remainder); shared objects are defined identically on every rank.
//! Everything is derived from the seed, so the same spec always yields the
//! same definitions in the same order.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{AttrValue, AttributeDef, NcType};
use crate::object::{ObjectDef, ObjectDefinition, ObjectKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorkloadError {
    #[error("{what} = {total} is not divisible by {ranks} ranks")]
    IndivisiblePartition { what: &'static str, total: u64, ranks: usize },
    #[error("invalid workload: {0}")]
    Invalid(String),
}

/// Object counts of the two reference datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dataset {
    D98M,
    D1G,
}

impl Dataset {
    pub fn total_vars(self) -> u64 {
        match self {
            Dataset::D98M => 568_480,
            Dataset::D1G => 5_684_800,
        }
    }

    pub fn total_dims(self) -> u64 {
        match self {
            Dataset::D98M => 852_715,
            Dataset::D1G => 8_527_150,
        }
    }

    /// Hash table size tuned for the full dataset.
    pub fn hash_size(self) -> usize {
        match self {
            Dataset::D98M => 16_384,
            Dataset::D1G => 1_048_576,
        }
    }

    /// Header megabytes (2^20 bytes) of the full dataset.
    pub fn metadata_mb(self) -> f64 {
        match self {
            Dataset::D98M => 70.72,
            Dataset::D1G => 802.20,
        }
    }
}

impl FromStr for Dataset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "98M" | "98m" => Ok(Dataset::D98M),
            "1G" | "1g" => Ok(Dataset::D1G),
            _ => Err(format!("unknown dataset {s:?}; expected 98M or 1G")),
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dataset::D98M => "98M",
            Dataset::D1G => "1G",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConflictMode {
    TypeMismatch,
    DimMismatch,
}

impl FromStr for ConflictMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "type" | "type_mismatch" => Ok(ConflictMode::TypeMismatch),
            "dim" | "dim_mismatch" => Ok(ConflictMode::DimMismatch),
            _ => Err(format!("unknown conflict mode {s:?}; expected type_mismatch or dim_mismatch")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConflictInjection {
    pub count: usize,
    pub mode: ConflictMode,
}

/// `Blocked`: `b{block:05}/v{idx:06}`, one or more blocks per rank, shared
/// objects under `shared/`. `Flat`: `v{rank:05}_{idx:06}`, no block paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NameScheme {
    Blocked,
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    /// Remainders go to the lowest ranks.
    Balanced,
    /// Counts must divide evenly.
    Strict,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub total_vars: u64,
    pub total_dims: u64,
    pub ranks: usize,
    pub dims_per_var: usize,
    /// Length of the text attribute attached to every variable; 0 for none.
    pub attr_bytes_per_var: usize,
    /// Fraction of variables and dimensions defined identically on all ranks.
    pub shared_fraction: f64,
    pub conflicts: Option<ConflictInjection>,
    pub name_scheme: NameScheme,
    pub blocks_per_rank: usize,
    pub partition: Partition,
    pub seed: u64,
}

/// No per-variable attribute by default: one dimension per variable already
/// puts classic header bytes per variable near the reference datasets' ratio.
pub const DEFAULT_ATTR_BYTES: usize = 0;

impl WorkloadSpec {
    pub fn new(total_vars: u64, total_dims: u64, ranks: usize, seed: u64) -> Self {
        Self {
            total_vars,
            total_dims,
            ranks,
            dims_per_var: 1,
            attr_bytes_per_var: DEFAULT_ATTR_BYTES,
            shared_fraction: 0.0,
            conflicts: None,
            name_scheme: NameScheme::Blocked,
            blocks_per_rank: 1,
            partition: Partition::Balanced,
            seed,
        }
    }

    /// A dataset scaled by `scale`, rounding counts to the nearest integer.
    pub fn scaled(dataset: Dataset, scale: f64, ranks: usize, seed: u64) -> Self {
        Self::new(
            scaled_count(dataset.total_vars(), scale),
            scaled_count(dataset.total_dims(), scale),
            ranks,
            seed,
        )
    }

    pub fn shared_vars(&self) -> u64 {
        scaled_count(self.total_vars, self.shared_fraction)
    }

    pub fn shared_dims(&self) -> u64 {
        scaled_count(self.total_dims, self.shared_fraction)
    }

    fn validate(&self) -> Result<(), WorkloadError> {
        let invalid = |m: &str| Err(WorkloadError::Invalid(m.to_string()));
        if self.ranks == 0 {
            return invalid("at least one rank is required");
        }
        if self.blocks_per_rank == 0 {
            return invalid("at least one block per rank is required");
        }
        if !(0.0..=1.0).contains(&self.shared_fraction) {
            return invalid("shared fraction must lie in [0, 1]");
        }
        if let Some(c) = self.conflicts {
            if c.count > 0 && self.ranks < 2 {
                return invalid("conflict injection needs at least two ranks");
            }
            if c.count > 0 && c.mode == ConflictMode::DimMismatch && self.dims_per_var == 0 {
                return invalid("dimension conflicts need variables with dimensions");
            }
        }
        if self.partition == Partition::Strict {
            for (what, total) in [
                ("unique variables", self.total_vars - self.shared_vars()),
                ("unique dimensions", self.total_dims - self.shared_dims()),
            ] {
                if total % self.ranks as u64 != 0 {
                    return Err(WorkloadError::IndivisiblePartition {
                        what,
                        total,
                        ranks: self.ranks,
                    });
                }
            }
        }
        Ok(())
    }
}

pub fn scaled_count(total: u64, scale: f64) -> u64 {
    (total as f64 * scale).round() as u64
}

/// Size of part `i` when `total` is split into `parts`, remainder first.
pub fn share(total: u64, parts: usize, i: usize) -> u64 {
    let parts = parts as u64;
    total / parts + u64::from((i as u64) < total % parts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub spec: WorkloadSpec,
    /// Definitions per rank, in the order the rank creates them.
    pub ranks: Vec<Vec<ObjectDefinition>>,
    /// Full names of variables defined inconsistently.
    pub injected: Vec<String>,
}

impl Workload {
    pub fn object_count(&self) -> usize {
        self.ranks.iter().map(Vec::len).sum()
    }

    pub fn count(&self, rank: usize, kind: ObjectKind) -> usize {
        self.ranks[rank].iter().filter(|o| o.kind() == kind).count()
    }
}

const VAR_TYPES: [NcType; 6] = [
    NcType::Byte,
    NcType::Char,
    NcType::Short,
    NcType::Int,
    NcType::Float,
    NcType::Double,
];

struct Names {
    scheme: NameScheme,
}

impl Names {
    fn dim(&self, rank: usize, block: usize, idx: u64) -> String {
        match self.scheme {
            NameScheme::Blocked => format!("b{block:05}/d{idx:06}"),
            NameScheme::Flat => format!("d{rank:05}_{idx:06}"),
        }
    }

    fn var(&self, rank: usize, block: usize, idx: u64) -> String {
        match self.scheme {
            NameScheme::Blocked => format!("b{block:05}/v{idx:06}"),
            NameScheme::Flat => format!("v{rank:05}_{idx:06}"),
        }
    }

    fn title(&self, rank: usize, block: usize) -> String {
        match self.scheme {
            NameScheme::Blocked => format!("b{block:05}/title"),
            NameScheme::Flat => format!("title{rank:05}"),
        }
    }

    fn shared_dim(&self, idx: u64) -> String {
        match self.scheme {
            NameScheme::Blocked => format!("shared/d{idx:06}"),
            NameScheme::Flat => format!("sd{idx:06}"),
        }
    }

    fn shared_var(&self, idx: u64) -> String {
        match self.scheme {
            NameScheme::Blocked => format!("shared/v{idx:06}"),
            NameScheme::Flat => format!("sv{idx:06}"),
        }
    }
}

/// Appends `n_dims` dimensions and `n_vars` variables over them.
fn fill_group(
    out: &mut Vec<ObjectDefinition>,
    rng: &mut ChaCha8Rng,
    spec: &WorkloadSpec,
    n_dims: u64,
    n_vars: u64,
    dim_name: impl Fn(u64) -> String,
    var_name: impl Fn(u64) -> String,
) {
    let first_dim = out.len();
    for i in 0..n_dims {
        out.push(ObjectDefinition::new(
            dim_name(i),
            ObjectDef::Dimension {
                len: rng.gen_range(1..=1024),
            },
        ));
    }
    let dims: Vec<String> = out[first_dim..].iter().map(|o| o.full_name.clone()).collect();
    for i in 0..n_vars {
        let var_dims = if dims.is_empty() {
            vec![]
        } else {
            (0..spec.dims_per_var)
                .map(|_| dims.choose(rng).unwrap().clone())
                .collect()
        };
        let attrs = if spec.attr_bytes_per_var == 0 {
            vec![]
        } else {
            vec![AttributeDef {
                name: "units".into(),
                value: AttrValue::Chars((0..spec.attr_bytes_per_var).map(|_| rng.gen_range(b'a'..=b'z')).collect()),
            }]
        };
        out.push(ObjectDefinition::new(
            var_name(i),
            ObjectDef::Variable {
                dims: var_dims,
                nc_type: *VAR_TYPES.choose(rng).unwrap(),
                attrs,
            },
        ));
    }
}

fn rank_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn gen_workload(spec: &WorkloadSpec) -> Result<Workload, WorkloadError> {
    spec.validate()?;
    let names = Names {
        scheme: spec.name_scheme,
    };
    let p = spec.ranks;
    let (shared_vars, shared_dims) = (spec.shared_vars(), spec.shared_dims());
    let mut shared = Vec::new();
    fill_group(
        &mut shared,
        &mut rank_rng(spec.seed, 0),
        spec,
        shared_dims,
        shared_vars,
        |i| names.shared_dim(i),
        |i| names.shared_var(i),
    );

    let (unique_vars, unique_dims) = (spec.total_vars - shared_vars, spec.total_dims - shared_dims);
    let mut ranks = Vec::with_capacity(p);
    for r in 0..p {
        let mut defs = shared.clone();
        let mut rng = rank_rng(spec.seed, r as u64 + 1);
        let (rank_vars, rank_dims) = (share(unique_vars, p, r), share(unique_dims, p, r));
        let mut var_base = 0;
        let mut dim_base = 0;
        for b in 0..spec.blocks_per_rank {
            let block = r * spec.blocks_per_rank + b;
            let (nv, nd) = (
                share(rank_vars, spec.blocks_per_rank, b),
                share(rank_dims, spec.blocks_per_rank, b),
            );
            // Flat names number objects per rank, blocked names per block.
            let (vb, db) = match spec.name_scheme {
                NameScheme::Flat => (var_base, dim_base),
                NameScheme::Blocked => (0, 0),
            };
            if nv + nd > 0 {
                defs.push(ObjectDefinition::new(
                    names.title(r, block),
                    ObjectDef::Attribute {
                        value: AttrValue::Chars(format!("block {block}").into_bytes()),
                    },
                ));
            }
            fill_group(
                &mut defs,
                &mut rng,
                spec,
                nd,
                nv,
                |i| names.dim(r, block, db + i),
                |i| names.var(r, block, vb + i),
            );
            var_base += nv;
            dim_base += nd;
        }
        ranks.push(defs);
    }

    let injected = match spec.conflicts {
        Some(c) if c.count > 0 => inject(&mut ranks, shared.len(), spec.seed, c)?,
        _ => vec![],
    };
    Ok(Workload {
        spec: spec.clone(),
        ranks,
        injected,
    })
}

/// For each victim (a unique variable of rank `a`), another rank `b` defines
/// identical copies of the victim's dimensions followed by a variable of the
/// same name with different metadata.
fn inject(
    ranks: &mut [Vec<ObjectDefinition>],
    shared_count: usize,
    seed: u64,
    c: ConflictInjection,
) -> Result<Vec<String>, WorkloadError> {
    let p = ranks.len();
    let mut rng = rank_rng(seed, u64::MAX);
    let mut candidates: Vec<(usize, usize)> = (0..p)
        .flat_map(|r| {
            ranks[r]
                .iter()
                .enumerate()
                .skip(shared_count)
                .filter(|(_, o)| match (&o.def, c.mode) {
                    (ObjectDef::Variable { .. }, ConflictMode::TypeMismatch) => true,
                    (ObjectDef::Variable { dims, .. }, ConflictMode::DimMismatch) => !dims.is_empty(),
                    _ => false,
                })
                .map(move |(i, _)| (r, i))
        })
        .collect();
    if candidates.len() < c.count {
        return Err(WorkloadError::Invalid(format!(
            "cannot inject {} conflicts into {} eligible variables",
            c.count,
            candidates.len()
        )));
    }
    candidates.shuffle(&mut rng);
    let mut victims: Vec<(usize, usize)> = candidates[..c.count].to_vec();
    victims.sort_unstable();
    let mut injected = Vec::with_capacity(c.count);
    for (a, i) in victims {
        let b = (a + rng.gen_range(1..p)) % p;
        let victim = ranks[a][i].clone();
        let ObjectDef::Variable { dims, nc_type, attrs } = victim.def else {
            unreachable!()
        };
        for d in &dims {
            let dim = ranks[a].iter().find(|o| o.kind() == ObjectKind::Dimension && &o.full_name == d).unwrap().clone();
            if !ranks[b].contains(&dim) {
                ranks[b].push(dim);
            }
        }
        let def = match c.mode {
            ConflictMode::TypeMismatch => {
                let pos = VAR_TYPES.iter().position(|t| *t == nc_type).unwrap();
                ObjectDef::Variable {
                    dims,
                    nc_type: VAR_TYPES[(pos + 1) % VAR_TYPES.len()],
                    attrs,
                }
            }
            ConflictMode::DimMismatch => {
                let mut dims = dims;
                dims.push(dims[0].clone());
                ObjectDef::Variable { dims, nc_type, attrs }
            }
        };
        injected.push(victim.full_name.clone());
        ranks[b].push(ObjectDefinition::new(victim.full_name, def));
    }
    injected.sort();
    Ok(injected)
}
