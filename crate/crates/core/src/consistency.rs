//! Cross-rank name-conflict detection and shared-object comparison.
//!
//! Records with equal `(kind, full_name)` form a group. A group whose payloads
//! are all byte-identical is a shared object; any divergence is a conflict.
//! Two detectors find the groups: a chained hash table of fixed size `k` per
//! kind, and a comparison sort followed by an adjacent scan. Both count every
//! name-string comparison they perform and produce identical groupings.

use std::cmp::Ordering;
use std::fmt;

use xxhash_rust::xxh3::xxh3_64;

use crate::object::{ObjectDef, ObjectKind};

/// Slot of `name` in a table of `k` slots.
pub fn slot(name: &str, k: usize) -> usize {
    (xxh3_64(name.as_bytes()) % k as u64) as usize
}

pub fn digest(payload: &[u8]) -> u64 {
    xxh3_64(payload)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NameRecord<'a> {
    pub kind: ObjectKind,
    pub full_name: &'a str,
    pub origin_rank: usize,
    pub payload_digest: u64,
    pub payload: &'a [u8],
}

impl<'a> NameRecord<'a> {
    pub fn new(kind: ObjectKind, full_name: &'a str, origin_rank: usize, payload: &'a [u8]) -> Self {
        Self {
            kind,
            full_name,
            origin_rank,
            payload_digest: digest(payload),
            payload,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct SharedSet {
    pub kind: ObjectKind,
    pub full_name: String,
    /// Ranks defining the object, ascending.
    pub ranks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Conflict {
    pub kind: ObjectKind,
    pub full_name: String,
    /// Every rank defining the name, ascending.
    pub ranks: Vec<usize>,
    /// First differing field between the first definition and a divergent one.
    pub field: String,
}

impl fmt::Display for Conflict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:?} differs in {} across ranks {:?}",
            self.kind.name(),
            self.full_name,
            self.field,
            self.ranks
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CheckReport {
    /// Names defined more than once with identical payloads, sorted.
    pub shared_sets: Vec<SharedSet>,
    /// Names defined more than once with divergent payloads, sorted.
    pub conflicts: Vec<Conflict>,
    pub string_comparisons: u64,
    pub payload_comparisons: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Comparison {
    Equal,
    Mismatch(String),
}

/// Byte comparison of two serialized definitions; a mismatch names the first
/// differing field.
pub fn compare_shared(a: &[u8], b: &[u8]) -> Comparison {
    if a == b {
        return Comparison::Equal;
    }
    let field = match (ObjectDef::from_payload(a), ObjectDef::from_payload(b)) {
        (Ok(x), Ok(y)) => first_difference(&x, &y),
        _ => "encoding".to_string(),
    };
    Comparison::Mismatch(field)
}

fn first_difference(a: &ObjectDef, b: &ObjectDef) -> String {
    use ObjectDef::*;
    match (a, b) {
        (Dimension { .. }, Dimension { .. }) => "length".into(),
        (Attribute { value: x }, Attribute { value: y }) => {
            if x.nc_type() != y.nc_type() {
                "type".into()
            } else {
                "values".into()
            }
        }
        (
            Variable {
                dims: da,
                nc_type: ta,
                attrs: aa,
            },
            Variable {
                dims: db,
                nc_type: tb,
                attrs: ab,
            },
        ) => {
            if ta != tb {
                "type".into()
            } else if da != db {
                "dimensions".into()
            } else if aa.len() != ab.len() {
                "attribute count".into()
            } else {
                aa.iter()
                    .zip(ab)
                    .find(|(x, y)| x != y)
                    .map(|(x, _)| format!("attribute {:?}", x.name))
                    .unwrap_or_else(|| "attribute values".into())
            }
        }
        _ => "kind".into(),
    }
}

struct Group {
    first: usize,
    members: Vec<usize>,
    mismatch: Option<String>,
}

/// Accumulates groups and payload comparisons shared by both detectors.
struct Grouper<'r, 'a> {
    records: &'r [NameRecord<'a>],
    groups: Vec<Group>,
    payload_comparisons: u64,
}

impl<'r, 'a> Grouper<'r, 'a> {
    fn new(records: &'r [NameRecord<'a>]) -> Self {
        Self {
            records,
            groups: Vec::new(),
            payload_comparisons: 0,
        }
    }

    fn open(&mut self, rec: usize) -> usize {
        self.groups.push(Group {
            first: rec,
            members: vec![rec],
            mismatch: None,
        });
        self.groups.len() - 1
    }

    fn join(&mut self, group: usize, rec: usize) {
        let g = &mut self.groups[group];
        let (a, b) = (&self.records[g.first], &self.records[rec]);
        self.payload_comparisons += 1;
        let equal = a.payload_digest == b.payload_digest && a.payload == b.payload;
        if !equal && g.mismatch.is_none() {
            g.mismatch = Some(match compare_shared(a.payload, b.payload) {
                Comparison::Mismatch(field) => field,
                Comparison::Equal => unreachable!(),
            });
        }
        g.members.push(rec);
    }

    fn finish(self, string_comparisons: u64) -> CheckReport {
        let mut report = CheckReport {
            string_comparisons,
            payload_comparisons: self.payload_comparisons,
            ..CheckReport::default()
        };
        for g in self.groups.into_iter().filter(|g| g.members.len() > 1) {
            let first = &self.records[g.first];
            let mut ranks: Vec<usize> = g.members.iter().map(|&i| self.records[i].origin_rank).collect();
            ranks.sort_unstable();
            ranks.dedup();
            match g.mismatch {
                None => report.shared_sets.push(SharedSet {
                    kind: first.kind,
                    full_name: first.full_name.to_string(),
                    ranks,
                }),
                Some(field) => report.conflicts.push(Conflict {
                    kind: first.kind,
                    full_name: first.full_name.to_string(),
                    ranks,
                    field,
                }),
            }
        }
        report.shared_sets.sort();
        report.conflicts.sort();
        report
    }
}

const EMPTY: u32 = u32::MAX;

/// Inserts every record into a `k`-slot chained table per kind. A record is
/// compared by name with each group already chained in its slot until one
/// matches; each of those is one string comparison.
pub fn hash_check(records: &[NameRecord], k: usize) -> CheckReport {
    assert!(k >= 1, "hash table size must be at least 1");
    let mut heads: [Vec<u32>; 3] = Default::default();
    let mut next: Vec<u32> = Vec::new();
    let mut grouper = Grouper::new(records);
    let mut comparisons = 0u64;
    for (i, rec) in records.iter().enumerate() {
        let table = &mut heads[rec.kind.index()];
        if table.is_empty() {
            table.resize(k, EMPTY);
        }
        let s = slot(rec.full_name, k);
        let mut cursor = table[s];
        let mut found = None;
        while cursor != EMPTY {
            comparisons += 1;
            let g = cursor as usize;
            if records[grouper.groups[g].first].full_name == rec.full_name {
                found = Some(g);
                break;
            }
            cursor = next[g];
        }
        match found {
            Some(g) => grouper.join(g, i),
            None => {
                let g = grouper.open(i);
                next.push(table[s]);
                table[s] = g as u32;
            }
        }
    }
    grouper.finish(comparisons)
}

/// Sorts names per kind with a counting comparator, then compares each
/// adjacent pair once.
pub fn sort_check(records: &[NameRecord]) -> CheckReport {
    let mut comparisons = 0u64;
    let mut grouper = Grouper::new(records);
    for kind in ObjectKind::ALL {
        let mut order: Vec<usize> = (0..records.len()).filter(|&i| records[i].kind == kind).collect();
        order.sort_by(|&a, &b| {
            comparisons += 1;
            records[a].full_name.cmp(records[b].full_name)
        });
        let mut current = None;
        for (pos, &i) in order.iter().enumerate() {
            let same = pos > 0 && {
                comparisons += 1;
                records[order[pos - 1]].full_name.cmp(records[i].full_name) == Ordering::Equal
            };
            match (same, current) {
                (true, Some(g)) => grouper.join(g, i),
                _ => current = Some(grouper.open(i)),
            }
        }
    }
    grouper.finish(comparisons)
}

/// Expected string comparisons for inserting `n` uniformly hashed names into a
/// `k`-slot table.
pub fn model_hash_cost(n: u64, k: u64) -> f64 {
    assert!(k >= 1);
    let n = n as f64;
    n * n / (2.0 * k as f64)
}

/// Expected per-rank string comparisons when each of `p` ranks checks its
/// `n/p` own objects and the `p` block names, both against `k`-slot tables.
/// Assumes an even partition.
pub fn model_newformat_cost(n: u64, p: u64, k: u64) -> f64 {
    assert!(p >= 1 && k >= 1);
    let (n, p, k) = (n as f64, p as f64, k as f64);
    (n / p) * (n / (2.0 * k * p)) + p * (p / (2.0 * k))
}
