//! In-process simulation of P ranks joined by collective operations.
//!
//! Every rank runs as its own thread inside [`Communicator::run`]. Collectives
//! rendezvous on a shared slot table: the last rank to arrive validates the
//! call (same operation, same root, same call history on every rank), builds
//! the result and releases the others. Results only depend on what each rank
//! contributed, never on arrival order.
//!
//! [`Schedule::Lockstep`] runs the same threads one at a time, handing a turn
//! token round-robin at every collective, which gives a fully sequential and
//! reproducible interleaving for debugging.

use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CommError {
    #[error("allgather record size mismatch: rank {rank} contributed {got} bytes, rank 0 contributed {expected}")]
    SizeMismatch { rank: usize, expected: usize, got: usize },
    #[error("collective misuse: {0}")]
    CollectiveMisuse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CollectiveOp {
    Allgather,
    Allgatherv,
    Broadcast,
    Barrier,
}

impl CollectiveOp {
    fn code(self) -> u8 {
        match self {
            CollectiveOp::Allgather => 1,
            CollectiveOp::Allgatherv => 2,
            CollectiveOp::Broadcast => 3,
            CollectiveOp::Barrier => 4,
        }
    }
}

/// How rank threads are interleaved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    /// Free-running threads.
    #[default]
    Threaded,
    /// One rank at a time, turn passed round-robin at each collective.
    Lockstep,
    /// Free-running threads with seeded random delays before each collective.
    Jittered(u64),
}

impl Schedule {
    /// `Lockstep` when `PARAHEAD_LOCKSTEP=1`, otherwise `Threaded`.
    pub fn from_env() -> Self {
        match std::env::var("PARAHEAD_LOCKSTEP") {
            Ok(v) if v == "1" => Schedule::Lockstep,
            _ => Schedule::Threaded,
        }
    }
}

/// Per-rank counters, keyed by operation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RankStats {
    pub calls: BTreeMap<CollectiveOp, u64>,
    pub sent: BTreeMap<CollectiveOp, u64>,
    pub received: BTreeMap<CollectiveOp, u64>,
}

impl RankStats {
    fn record(&mut self, op: CollectiveOp, sent: u64, received: u64) {
        *self.calls.entry(op).or_default() += 1;
        *self.sent.entry(op).or_default() += sent;
        *self.received.entry(op).or_default() += received;
    }

    pub fn bytes_sent(&self) -> u64 {
        self.sent.values().sum()
    }

    pub fn bytes_received(&self) -> u64 {
        self.received.values().sum()
    }

    pub fn calls(&self, op: CollectiveOp) -> u64 {
        self.calls.get(&op).copied().unwrap_or(0)
    }

    pub fn received(&self, op: CollectiveOp) -> u64 {
        self.received.get(&op).copied().unwrap_or(0)
    }
}

/// Counters of a whole run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommStats {
    pub calls_by_op: BTreeMap<CollectiveOp, u64>,
    pub per_rank: Vec<RankStats>,
}

impl CommStats {
    pub fn bytes_sent(&self, rank: usize) -> u64 {
        self.per_rank[rank].bytes_sent()
    }

    pub fn bytes_received(&self, rank: usize) -> u64 {
        self.per_rank[rank].bytes_received()
    }

    pub fn total_bytes_received(&self) -> u64 {
        self.per_rank.iter().map(RankStats::bytes_received).sum()
    }
}

struct Deposit {
    op: CollectiveOp,
    root: usize,
    history: u64,
    data: Vec<u8>,
}

type Outcome = Arc<Result<Vec<Vec<u8>>, CommError>>;

struct State {
    generation: u64,
    arrived: usize,
    slots: Vec<Option<Deposit>>,
    result: Option<Outcome>,
    departed: Vec<bool>,
    turn: usize,
}

/// The shared rendezvous object for one run of P ranks.
pub struct Communicator {
    size: usize,
    schedule: Schedule,
    state: Mutex<State>,
    cv: Condvar,
}

impl Communicator {
    fn new(size: usize, schedule: Schedule) -> Self {
        assert!(size >= 1, "a communicator needs at least one rank");
        Self {
            size,
            schedule,
            state: Mutex::new(State {
                generation: 0,
                arrived: 0,
                slots: (0..size).map(|_| None).collect(),
                result: None,
                departed: vec![false; size],
                turn: 0,
            }),
            cv: Condvar::new(),
        }
    }

    /// Runs `body` once per rank and returns the per-rank results in rank order.
    pub fn run<T, F>(size: usize, schedule: Schedule, body: F) -> (Vec<T>, CommStats)
    where
        T: Send,
        F: Fn(&mut RankComm<'_>) -> T + Sync,
    {
        let comm = Communicator::new(size, schedule);
        let outputs: Vec<(T, RankStats)> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..size)
                .map(|rank| {
                    let comm = &comm;
                    let body = &body;
                    scope.spawn(move || {
                        let mut ctx = RankComm::new(comm, rank);
                        let out = body(&mut ctx);
                        let stats = std::mem::take(&mut ctx.stats);
                        drop(ctx);
                        (out, stats)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|e| std::panic::resume_unwind(e)))
                .collect()
        });
        let mut results = Vec::with_capacity(size);
        let mut per_rank = Vec::with_capacity(size);
        for (out, stats) in outputs {
            results.push(out);
            per_rank.push(stats);
        }
        let stats = CommStats {
            calls_by_op: per_rank[0].calls.clone(),
            per_rank,
        };
        (results, stats)
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn lockstep(&self) -> bool {
        self.schedule == Schedule::Lockstep
    }

    fn pass_turn(&self, state: &mut State, from: usize) {
        for step in 1..=self.size {
            let next = (from + step) % self.size;
            if !state.departed[next] {
                state.turn = next;
                return;
            }
        }
    }

    fn wait_for_turn<'a>(&self, mut state: MutexGuard<'a, State>, rank: usize) -> MutexGuard<'a, State> {
        while self.lockstep() && state.turn != rank {
            state = self.cv.wait(state).unwrap_or_else(|e| e.into_inner());
        }
        state
    }

    fn complete(&self, state: &mut State) {
        let departed: Vec<usize> = (0..self.size).filter(|&r| state.departed[r]).collect();
        let outcome = if departed.is_empty() {
            let deposits: Vec<Deposit> = state.slots.iter_mut().map(|s| s.take().unwrap()).collect();
            resolve(deposits)
        } else {
            state.slots.iter_mut().for_each(|s| *s = None);
            Err(CommError::CollectiveMisuse(format!(
                "ranks {departed:?} finished while other ranks entered a collective"
            )))
        };
        state.result = Some(Arc::new(outcome));
        state.arrived = 0;
        state.generation += 1;
        self.cv.notify_all();
    }

    fn collective(&self, rank: usize, deposit: Deposit) -> Outcome {
        let mut state = self.lock();
        let generation = state.generation;
        state.slots[rank] = Some(deposit);
        state.arrived += 1;
        let departed = state.departed.iter().filter(|d| **d).count();
        if state.arrived + departed == self.size {
            self.complete(&mut state);
        }
        if self.lockstep() {
            self.pass_turn(&mut state, rank);
            self.cv.notify_all();
        }
        while state.generation == generation || (self.lockstep() && state.turn != rank) {
            state = self.cv.wait(state).unwrap_or_else(|e| e.into_inner());
        }
        state.result.clone().expect("completed collective has a result")
    }

    fn depart(&self, rank: usize) {
        let mut state = self.lock();
        state.departed[rank] = true;
        let departed = state.departed.iter().filter(|d| **d).count();
        if state.arrived > 0 && state.arrived + departed == self.size {
            self.complete(&mut state);
        }
        if self.lockstep() {
            self.pass_turn(&mut state, rank);
        }
        self.cv.notify_all();
    }
}

fn resolve(deposits: Vec<Deposit>) -> Result<Vec<Vec<u8>>, CommError> {
    let first = &deposits[0];
    for (rank, d) in deposits.iter().enumerate() {
        if d.op != first.op || d.root != first.root || d.history != first.history {
            return Err(CommError::CollectiveMisuse(format!(
                "rank {rank} called {:?}(root {}) but rank 0 called {:?}(root {}), or their call histories differ",
                d.op, d.root, first.op, first.root
            )));
        }
    }
    match first.op {
        CollectiveOp::Allgather => {
            let expected = first.data.len();
            if let Some((rank, d)) = deposits.iter().enumerate().find(|(_, d)| d.data.len() != expected) {
                return Err(CommError::SizeMismatch {
                    rank,
                    expected,
                    got: d.data.len(),
                });
            }
            Ok(deposits.into_iter().map(|d| d.data).collect())
        }
        CollectiveOp::Allgatherv => Ok(deposits.into_iter().map(|d| d.data).collect()),
        CollectiveOp::Broadcast => {
            let root = first.root;
            let mut deposits = deposits;
            Ok(vec![std::mem::take(&mut deposits[root].data)])
        }
        CollectiveOp::Barrier => Ok(Vec::new()),
    }
}

/// One rank's handle on the communicator.
pub struct RankComm<'a> {
    comm: &'a Communicator,
    rank: usize,
    history: u64,
    stats: RankStats,
    jitter: Option<ChaCha8Rng>,
}

impl<'a> RankComm<'a> {
    fn new(comm: &'a Communicator, rank: usize) -> Self {
        let jitter = match comm.schedule {
            Schedule::Jittered(seed) => Some(ChaCha8Rng::seed_from_u64(seed ^ (rank as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))),
            _ => None,
        };
        drop(comm.wait_for_turn(comm.lock(), rank));
        Self {
            comm,
            rank,
            history: 0,
            stats: RankStats::default(),
            jitter,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn size(&self) -> usize {
        self.comm.size
    }

    pub fn is_root(&self) -> bool {
        self.rank == 0
    }

    pub fn stats(&self) -> &RankStats {
        &self.stats
    }

    fn call(&mut self, op: CollectiveOp, root: usize, data: Vec<u8>) -> Result<Vec<Vec<u8>>, CommError> {
        if let Some(rng) = self.jitter.as_mut() {
            let micros = rng.gen_range(0..200);
            if micros < 20 {
                std::thread::yield_now();
            } else {
                std::thread::sleep(Duration::from_micros(micros));
            }
        }
        let mut key = [0u8; 17];
        key[..8].copy_from_slice(&self.history.to_be_bytes());
        key[8] = op.code();
        key[9..].copy_from_slice(&(root as u64).to_be_bytes());
        self.history = xxhash_rust::xxh3::xxh3_64(&key);
        let outcome = self.comm.collective(
            self.rank,
            Deposit {
                op,
                root,
                history: self.history,
                data,
            },
        );
        (*outcome).clone()
    }

    /// Gathers one fixed-size record from every rank, in rank order.
    pub fn allgather(&mut self, record: &[u8]) -> Result<Vec<Vec<u8>>, CommError> {
        let out = self.call(CollectiveOp::Allgather, 0, record.to_vec())?;
        let received = out.iter().map(|r| r.len() as u64).sum();
        self.stats.record(CollectiveOp::Allgather, record.len() as u64, received);
        Ok(out)
    }

    /// Gathers a variable-size contribution from every rank. The sizes are
    /// exchanged first with an [`allgather`](Self::allgather), as a real
    /// implementation must do to size its receive buffer.
    pub fn allgatherv(&mut self, contribution: &[u8]) -> Result<Vec<Vec<u8>>, CommError> {
        let sizes = self.allgather(&(contribution.len() as u64).to_be_bytes())?;
        let out = self.call(CollectiveOp::Allgatherv, 0, contribution.to_vec())?;
        for (rank, (size, got)) in sizes.iter().zip(&out).enumerate() {
            let size = u64::from_be_bytes(size.as_slice().try_into().unwrap());
            if size != got.len() as u64 {
                return Err(CommError::CollectiveMisuse(format!(
                    "rank {rank} announced {size} bytes but sent {}",
                    got.len()
                )));
            }
        }
        let received = out.iter().map(|r| r.len() as u64).sum();
        self.stats.record(CollectiveOp::Allgatherv, contribution.len() as u64, received);
        Ok(out)
    }

    /// Returns the root's payload on every rank; other ranks' payloads are ignored.
    pub fn broadcast(&mut self, root: usize, payload: &[u8]) -> Result<Vec<u8>, CommError> {
        if root >= self.size() {
            return Err(CommError::CollectiveMisuse(format!("broadcast root {root} out of range")));
        }
        let data = if self.rank == root { payload.to_vec() } else { Vec::new() };
        let mut out = self.call(CollectiveOp::Broadcast, root, data)?;
        let payload = out.pop().unwrap_or_default();
        let (sent, received) = if self.rank == root {
            (payload.len() as u64, 0)
        } else {
            (0, payload.len() as u64)
        };
        self.stats.record(CollectiveOp::Broadcast, sent, received);
        Ok(payload)
    }

    pub fn barrier(&mut self) -> Result<(), CommError> {
        self.call(CollectiveOp::Barrier, 0, Vec::new())?;
        self.stats.record(CollectiveOp::Barrier, 0, 0);
        Ok(())
    }
}

impl Drop for RankComm<'_> {
    fn drop(&mut self) {
        self.comm.depart(self.rank);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCHEDULES: [Schedule; 3] = [Schedule::Threaded, Schedule::Lockstep, Schedule::Jittered(5)];

    #[test]
    fn allgather_two_ranks() {
        for schedule in SCHEDULES {
            let (out, stats) = Communicator::run(2, schedule, |c| c.allgather(&[c.rank() as u8 + 1]).unwrap());
            assert_eq!(out, vec![vec![vec![1], vec![2]]; 2]);
            assert_eq!(stats.calls_by_op[&CollectiveOp::Allgather], 1);
        }
    }

    #[test]
    fn single_rank_is_identity() {
        let (out, _) = Communicator::run(1, Schedule::Threaded, |c| {
            (
                c.allgather(b"ab").unwrap(),
                c.allgatherv(b"xyz").unwrap(),
                c.broadcast(0, b"q").unwrap(),
                c.barrier(),
            )
        });
        assert_eq!(out[0], (vec![b"ab".to_vec()], vec![b"xyz".to_vec()], b"q".to_vec(), Ok(())));
    }

    #[test]
    fn allgather_size_mismatch_reported_everywhere() {
        for schedule in SCHEDULES {
            let (out, _) = Communicator::run(3, schedule, |c| c.allgather(&vec![0u8; 1 + c.rank() / 2]));
            for r in out {
                assert_eq!(
                    r,
                    Err(CommError::SizeMismatch {
                        rank: 2,
                        expected: 1,
                        got: 2
                    })
                );
            }
        }
    }

    #[test]
    fn allgatherv_preserves_empty_contributions() {
        for schedule in SCHEDULES {
            let (out, stats) = Communicator::run(3, schedule, |c| c.allgatherv(&vec![c.rank() as u8; 4 * c.rank()]).unwrap());
            for got in &out {
                assert_eq!(got, &vec![vec![], vec![1; 4], vec![2; 8]]);
            }
            for r in 0..3 {
                assert_eq!(stats.per_rank[r].received(CollectiveOp::Allgatherv), 12);
                assert_eq!(stats.per_rank[r].calls(CollectiveOp::Allgather), 1);
                assert_eq!(stats.per_rank[r].calls(CollectiveOp::Allgatherv), 1);
            }
        }
    }

    #[test]
    fn broadcast_ignores_non_root_payloads() {
        for schedule in SCHEDULES {
            let (out, _) = Communicator::run(4, schedule, |c| {
                let mine = vec![c.rank() as u8; 3];
                (c.broadcast(2, &mine).unwrap(), c.broadcast(0, b"").unwrap())
            });
            for got in out {
                assert_eq!(got, (vec![2u8; 3], vec![]));
            }
        }
    }

    #[test]
    fn barrier_releases_everyone() {
        for schedule in SCHEDULES {
            let (out, stats) = Communicator::run(5, schedule, |c| {
                for _ in 0..3 {
                    c.barrier().unwrap();
                }
                c.rank()
            });
            assert_eq!(out, vec![0, 1, 2, 3, 4]);
            assert_eq!(stats.calls_by_op[&CollectiveOp::Barrier], 3);
        }
    }

    #[test]
    fn mismatched_operations_are_misuse() {
        for schedule in SCHEDULES {
            let (out, _) = Communicator::run(2, schedule, |c| {
                if c.rank() == 0 {
                    c.barrier().map(|_| ())
                } else {
                    c.broadcast(0, b"x").map(|_| ())
                }
            });
            assert!(out.iter().all(|r| matches!(r, Err(CommError::CollectiveMisuse(_)))));
        }
    }

    #[test]
    fn early_exit_is_misuse() {
        for schedule in SCHEDULES {
            let (out, _) = Communicator::run(3, schedule, |c| if c.rank() == 1 { Ok(()) } else { c.barrier() });
            assert!(matches!(out[0], Err(CommError::CollectiveMisuse(_))));
            assert!(out[1].is_ok());
            assert!(matches!(out[2], Err(CommError::CollectiveMisuse(_))));
        }
    }

    #[test]
    fn divergent_history_is_misuse() {
        let (out, _) = Communicator::run(2, Schedule::Threaded, |c| {
            if c.rank() == 0 {
                let _ = c.barrier();
                c.barrier()
            } else {
                let _ = c.broadcast(0, b"");
                c.barrier()
            }
        });
        assert!(out.iter().all(|r| r.is_err()));
    }

    #[test]
    fn lockstep_runs_one_rank_at_a_time() {
        let active = std::sync::atomic::AtomicUsize::new(0);
        let (out, _) = Communicator::run(4, Schedule::Lockstep, |c| {
            let mut max_seen = 0;
            for _ in 0..5 {
                let now = active.fetch_add(1, std::sync::atomic::Ordering::SeqCst) + 1;
                max_seen = max_seen.max(now);
                std::thread::sleep(Duration::from_micros(50));
                active.fetch_sub(1, std::sync::atomic::Ordering::SeqCst);
                c.barrier().unwrap();
            }
            max_seen
        });
        assert!(out.iter().all(|m| *m == 1));
    }
}
