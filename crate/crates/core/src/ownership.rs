//! Per-object leases: many shared readers or one exclusive writer, and
//! commits that append content then swap the object's head in one step.
//!
//! Each object's lease state is one atomic word: bit 63 is the writer flag
//! and the low bits count readers, so `writer => readers == 0` holds by
//! construction of the compare-and-swap transitions.

use std::collections::HashMap;
use std::sync::atomic::{AtomicI64, AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cas::{CasError, ContentHash, PackStore};

const WRITER: u64 = 1 << 63;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObjectId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LeaseId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ReadLease {
    pub object: ObjectId,
    pub id: LeaseId,
    pub issued: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WriteLease {
    pub object: ObjectId,
    pub id: LeaseId,
    pub issued: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Lease {
    Read(ReadLease),
    Write(WriteLease),
}

impl Lease {
    pub fn id(&self) -> LeaseId {
        match self {
            Lease::Read(l) => l.id,
            Lease::Write(l) => l.id,
        }
    }

    pub fn object(&self) -> ObjectId {
        match self {
            Lease::Read(l) => l.object,
            Lease::Write(l) => l.object,
        }
    }
}

impl From<ReadLease> for Lease {
    fn from(l: ReadLease) -> Self {
        Lease::Read(l)
    }
}

impl From<WriteLease> for Lease {
    fn from(l: WriteLease) -> Self {
        Lease::Write(l)
    }
}

#[derive(Debug, Error)]
pub enum OwnError {
    #[error("a writer holds the object")]
    WriterActive,
    #[error("{0} readers hold the object")]
    ReadersActive(u64),
    #[error("lease is not live")]
    StaleLease,
    #[error("lease already released")]
    DoubleRelease,
    #[error("version chain is broken at version {0}")]
    BrokenChain(u64),
    #[error(transparent)]
    Cas(#[from] CasError),
}

/// Observable state of one lease-table entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LeaseEntry {
    pub readers: u64,
    pub writer: bool,
    pub head: Option<ContentHash>,
    pub version: u64,
}

#[derive(Debug, Clone, Copy, Default)]
struct HeadState {
    head: Option<ContentHash>,
    version: u64,
    chain_tip: Option<ContentHash>,
    swaps: u64,
}

#[derive(Debug, Default)]
struct Slot {
    state: AtomicU64,
    head: Mutex<HeadState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Read,
    Write,
}

/// One committed update: links the previous record, the head it replaced
/// and the head it installed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VersionRecord {
    pub prev_record: Option<ContentHash>,
    pub parent_head: Option<ContentHash>,
    pub new_head: ContentHash,
    pub tick: u64,
    pub version: u64,
}

const RECORD_MAGIC: &[u8; 4] = b"VREC";
const RECORD_LEN: usize = 4 + 33 + 33 + 32 + 8 + 8;

impl VersionRecord {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(RECORD_LEN);
        out.extend_from_slice(RECORD_MAGIC);
        for h in [self.prev_record, self.parent_head] {
            match h {
                Some(h) => {
                    out.push(1);
                    out.extend_from_slice(h.digest());
                }
                None => out.extend_from_slice(&[0u8; 33]),
            }
        }
        out.extend_from_slice(self.new_head.digest());
        out.extend_from_slice(&self.tick.to_le_bytes());
        out.extend_from_slice(&self.version.to_le_bytes());
        out
    }

    pub fn decode(b: &[u8]) -> Option<Self> {
        if b.len() != RECORD_LEN || &b[..4] != RECORD_MAGIC {
            return None;
        }
        let opt = |s: &[u8]| -> Option<Option<ContentHash>> {
            match s[0] {
                0 => Some(None),
                1 => Some(Some(ContentHash::from_digest(s[1..33].try_into().ok()?))),
                _ => None,
            }
        };
        Some(Self {
            prev_record: opt(&b[4..37])?,
            parent_head: opt(&b[37..70])?,
            new_head: ContentHash::from_digest(b[70..102].try_into().ok()?),
            tick: u64::from_le_bytes(b[102..110].try_into().ok()?),
            version: u64::from_le_bytes(b[110..118].try_into().ok()?),
        })
    }
}

/// Result of replaying an object's version chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Replay {
    pub head: Option<ContentHash>,
    pub version: u64,
    /// Number of fields (head, version) where replay disagrees with the table.
    pub diff: u32,
}

#[derive(Debug, Default)]
pub struct LeaseTable {
    slots: RwLock<HashMap<ObjectId, Arc<Slot>>>,
    live: Mutex<HashMap<LeaseId, (ObjectId, Kind)>>,
    next_lease: AtomicU64,
    clock: AtomicU64,
}

impl LeaseTable {
    pub fn new() -> Self {
        Self::default()
    }

    fn slot(&self, object: ObjectId) -> Arc<Slot> {
        if let Some(s) = self.slots.read().get(&object) {
            return s.clone();
        }
        self.slots.write().entry(object).or_default().clone()
    }

    fn issue(&self, object: ObjectId, kind: Kind) -> (LeaseId, u64) {
        let id = LeaseId(self.next_lease.fetch_add(1, Ordering::Relaxed));
        let tick = self.clock.fetch_add(1, Ordering::Relaxed);
        self.live.lock().insert(id, (object, kind));
        (id, tick)
    }

    pub fn acquire_read(&self, object: ObjectId) -> Result<ReadLease, OwnError> {
        let slot = self.slot(object);
        let mut cur = slot.state.load(Ordering::Acquire);
        loop {
            if cur & WRITER != 0 {
                return Err(OwnError::WriterActive);
            }
            match slot
                .state
                .compare_exchange_weak(cur, cur + 1, Ordering::AcqRel, Ordering::Acquire)
            {
                Ok(_) => break,
                Err(actual) => cur = actual,
            }
        }
        let (id, issued) = self.issue(object, Kind::Read);
        Ok(ReadLease { object, id, issued })
    }

    pub fn acquire_write(&self, object: ObjectId) -> Result<WriteLease, OwnError> {
        let slot = self.slot(object);
        match slot
            .state
            .compare_exchange(0, WRITER, Ordering::AcqRel, Ordering::Acquire)
        {
            Ok(_) => {}
            Err(actual) if actual & WRITER != 0 => return Err(OwnError::WriterActive),
            Err(actual) => return Err(OwnError::ReadersActive(actual)),
        }
        let (id, issued) = self.issue(object, Kind::Write);
        Ok(WriteLease { object, id, issued })
    }

    pub fn release(&self, lease: impl Into<Lease>) -> Result<(), OwnError> {
        let lease = lease.into();
        let kind = match self.live.lock().remove(&lease.id()) {
            Some((obj, kind)) if obj == lease.object() => kind,
            Some(other) => {
                // wrong object for this id; put it back untouched
                self.live.lock().insert(lease.id(), other);
                return Err(OwnError::StaleLease);
            }
            None => return Err(OwnError::DoubleRelease),
        };
        let slot = self.slot(lease.object());
        match kind {
            Kind::Read => slot.state.fetch_sub(1, Ordering::AcqRel),
            Kind::Write => slot.state.fetch_and(!WRITER, Ordering::AcqRel),
        };
        Ok(())
    }

    /// True if `lease` is a live write lease on its object.
    pub fn holds_write(&self, lease: &WriteLease) -> bool {
        matches!(self.live.lock().get(&lease.id), Some((o, Kind::Write)) if *o == lease.object)
    }

    /// Puts `content` into `cas`, records the version link, and swaps the
    /// object's head to the new hash.
    pub fn commit(&self, lease: &WriteLease, content: &[u8], cas: &PackStore) -> Result<ContentHash, OwnError> {
        if !self.holds_write(lease) {
            return Err(OwnError::StaleLease);
        }
        let new_head = cas.put(content)?;
        let tick = self.clock.fetch_add(1, Ordering::Relaxed);
        let slot = self.slot(lease.object);
        let mut head = slot.head.lock();
        let rec = VersionRecord {
            prev_record: head.chain_tip,
            parent_head: head.head,
            new_head,
            tick,
            version: head.version + 1,
        };
        let rec_hash = cas.put(&rec.encode())?;
        // the swap: one assignment of the head state under the slot lock
        *head = HeadState {
            head: Some(new_head),
            version: rec.version,
            chain_tip: Some(rec_hash),
            swaps: head.swaps + 1,
        };
        Ok(new_head)
    }

    pub fn entry(&self, object: ObjectId) -> LeaseEntry {
        let Some(slot) = self.slots.read().get(&object).cloned() else {
            return LeaseEntry::default();
        };
        let state = slot.state.load(Ordering::Acquire);
        let head = *slot.head.lock();
        LeaseEntry {
            readers: state & !WRITER,
            writer: state & WRITER != 0,
            head: head.head,
            version: head.version,
        }
    }

    pub fn head(&self, object: ObjectId) -> Option<ContentHash> {
        self.entry(object).head
    }

    /// Head-swap operations performed on the object so far.
    pub fn head_swaps(&self, object: ObjectId) -> u64 {
        self.slots
            .read()
            .get(&object)
            .map_or(0, |s| s.head.lock().swaps)
    }

    pub fn chain_tip(&self, object: ObjectId) -> Option<ContentHash> {
        self.slots.read().get(&object).and_then(|s| s.head.lock().chain_tip)
    }

    /// Version records from oldest to newest.
    pub fn version_chain(&self, object: ObjectId, cas: &PackStore) -> Result<Vec<VersionRecord>, OwnError> {
        let mut out = Vec::new();
        let mut cursor = self.chain_tip(object);
        while let Some(h) = cursor {
            let rec = VersionRecord::decode(&cas.get(&h)?).ok_or(OwnError::BrokenChain(out.len() as u64))?;
            cursor = rec.prev_record;
            out.push(rec);
        }
        out.reverse();
        Ok(out)
    }

    /// Re-applies the stored version chain from nothing and compares the
    /// result with the live head.
    pub fn replay(&self, object: ObjectId, cas: &PackStore) -> Result<Replay, OwnError> {
        let chain = self.version_chain(object, cas)?;
        let mut head = None;
        let mut version = 0;
        for rec in &chain {
            if rec.parent_head != head || rec.version != version + 1 {
                return Err(OwnError::BrokenChain(rec.version));
            }
            head = Some(rec.new_head);
            version = rec.version;
        }
        let live = self.entry(object);
        let diff = (live.head != head) as u32 + (live.version != version) as u32;
        Ok(Replay { head, version, diff })
    }

    pub fn objects(&self) -> Vec<ObjectId> {
        let mut v: Vec<_> = self.slots.read().keys().copied().collect();
        v.sort();
        v
    }

    pub fn live_leases(&self) -> usize {
        self.live.lock().len()
    }

    pub fn fork(&self) -> Self {
        let slots = self
            .slots
            .read()
            .iter()
            .map(|(k, s)| {
                (
                    *k,
                    Arc::new(Slot {
                        state: AtomicU64::new(s.state.load(Ordering::Acquire)),
                        head: Mutex::new(*s.head.lock()),
                    }),
                )
            })
            .collect();
        Self {
            slots: RwLock::new(slots),
            live: Mutex::new(self.live.lock().clone()),
            next_lease: AtomicU64::new(self.next_lease.load(Ordering::Relaxed)),
            clock: AtomicU64::new(self.clock.load(Ordering::Relaxed)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StressReport {
    pub ops: u64,
    pub acquired: u64,
    pub violations: u64,
}

/// One `trial,violations` row per stress run.
pub fn stress_csv(reports: &[StressReport]) -> String {
    let mut s = String::from("trial,violations\n");
    for (i, r) in reports.iter().enumerate() {
        s.push_str(&format!("{i},{}\n", r.violations));
    }
    s
}

/// Hammers a lease table from `workers` threads with random acquire/release
/// traffic over `objects` objects. Every holder checks independent shadow
/// counters for an exclusivity breach while it holds its lease.
pub fn stress_exclusivity(workers: usize, ops_per_worker: u64, objects: u64, seed: u64) -> StressReport {
    stress(workers, ops_per_worker, objects, seed, true)
}

/// The same workload with lease acquisition skipped, as a baseline for the
/// race detector.
pub fn stress_unguarded(workers: usize, ops_per_worker: u64, objects: u64, seed: u64) -> StressReport {
    stress(workers, ops_per_worker, objects, seed, false)
}

fn stress(workers: usize, ops_per_worker: u64, objects: u64, seed: u64, guarded: bool) -> StressReport {
    let table = LeaseTable::new();
    let shadow: Vec<(AtomicI64, AtomicI64)> = (0..objects).map(|_| (AtomicI64::new(0), AtomicI64::new(0))).collect();
    let violations = AtomicU64::new(0);
    let acquired = AtomicU64::new(0);
    std::thread::scope(|s| {
        for w in 0..workers {
            let (table, shadow, violations, acquired) = (&table, &shadow, &violations, &acquired);
            s.spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (w as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
                for _ in 0..ops_per_worker {
                    let o = rng.random_range(0..objects);
                    let (readers, writers) = &shadow[o as usize];
                    if rng.random_bool(0.3) {
                        let lease = if guarded {
                            match table.acquire_write(ObjectId(o)) {
                                Ok(l) => Some(l),
                                Err(_) => continue,
                            }
                        } else {
                            None
                        };
                        acquired.fetch_add(1, Ordering::Relaxed);
                        writers.fetch_add(1, Ordering::SeqCst);
                        for _ in 0..4 {
                            let e = table.entry(ObjectId(o));
                            if readers.load(Ordering::SeqCst) != 0
                                || writers.load(Ordering::SeqCst) != 1
                                || (e.writer && e.readers > 0)
                            {
                                violations.fetch_add(1, Ordering::Relaxed);
                            }
                            std::thread::yield_now();
                        }
                        writers.fetch_sub(1, Ordering::SeqCst);
                        if let Some(l) = lease {
                            table.release(l).expect("live write lease");
                        }
                    } else {
                        let lease = if guarded {
                            match table.acquire_read(ObjectId(o)) {
                                Ok(l) => Some(l),
                                Err(_) => continue,
                            }
                        } else {
                            None
                        };
                        acquired.fetch_add(1, Ordering::Relaxed);
                        readers.fetch_add(1, Ordering::SeqCst);
                        for _ in 0..4 {
                            let e = table.entry(ObjectId(o));
                            if writers.load(Ordering::SeqCst) != 0 || (e.writer && e.readers > 0) {
                                violations.fetch_add(1, Ordering::Relaxed);
                            }
                            std::thread::yield_now();
                        }
                        readers.fetch_sub(1, Ordering::SeqCst);
                        if let Some(l) = lease {
                            table.release(l).expect("live read lease");
                        }
                    }
                }
            });
        }
    });
    StressReport {
        ops: workers as u64 * ops_per_worker,
        acquired: acquired.into_inner(),
        violations: violations.into_inner(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cas::StoreConfig;

    const O: ObjectId = ObjectId(7);

    #[test]
    fn shared_reads() {
        let t = LeaseTable::new();
        t.acquire_read(O).unwrap();
        t.acquire_read(O).unwrap();
        assert_eq!(t.entry(O).readers, 2);
        assert!(matches!(t.acquire_write(O), Err(OwnError::ReadersActive(2))));
    }

    #[test]
    fn writer_excludes_readers() {
        let t = LeaseTable::new();
        let w = t.acquire_write(O).unwrap();
        assert!(matches!(t.acquire_read(O), Err(OwnError::WriterActive)));
        assert!(matches!(t.acquire_write(O), Err(OwnError::WriterActive)));
        t.release(w).unwrap();
        let r = t.acquire_read(O).unwrap();
        assert!(matches!(t.acquire_write(O), Err(OwnError::ReadersActive(1))));
        t.release(r).unwrap();
        assert!(t.acquire_write(O).is_ok());
    }

    #[test]
    fn double_release() {
        let t = LeaseTable::new();
        let r = t.acquire_read(O).unwrap();
        t.release(r).unwrap();
        assert_eq!(t.entry(O).readers, 0);
        assert!(matches!(t.release(r), Err(OwnError::DoubleRelease)));
        assert_eq!(t.entry(O).readers, 0);
    }

    #[test]
    fn release_orders_of_four_readers() {
        // every permutation of releasing four read leases
        let perms = permutations(4);
        assert_eq!(perms.len(), 24);
        for p in perms {
            let t = LeaseTable::new();
            let leases: Vec<_> = (0..4).map(|_| t.acquire_read(O).unwrap()).collect();
            let mut expected = 4u64;
            for i in p {
                t.release(leases[i]).unwrap();
                expected -= 1;
                assert_eq!(t.entry(O).readers, expected);
            }
            assert!(t.acquire_write(O).is_ok());
        }
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for i in 0..=p.len() {
                let mut q = p.clone();
                q.insert(i, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn lease_state_machine_enumeration() {
        // all sequences of 5 steps over {acquire_read, acquire_write,
        // release_oldest}; compare against a plain counter model
        for code in 0..3u32.pow(5) {
            let t = LeaseTable::new();
            let mut held: Vec<Lease> = Vec::new();
            let (mut readers, mut writer) = (0u64, false);
            let mut c = code;
            for _ in 0..5 {
                match c % 3 {
                    0 => match t.acquire_read(O) {
                        Ok(l) => {
                            assert!(!writer);
                            readers += 1;
                            held.push(l.into());
                        }
                        Err(_) => assert!(writer),
                    },
                    1 => match t.acquire_write(O) {
                        Ok(l) => {
                            assert!(!writer && readers == 0);
                            writer = true;
                            held.push(l.into());
                        }
                        Err(_) => assert!(writer || readers > 0),
                    },
                    _ => {
                        if !held.is_empty() {
                            let l = held.remove(0);
                            t.release(l).unwrap();
                            match l {
                                Lease::Read(_) => readers -= 1,
                                Lease::Write(_) => writer = false,
                            }
                        }
                    }
                }
                c /= 3;
                let e = t.entry(O);
                assert_eq!((e.readers, e.writer), (readers, writer));
                assert!(!(e.writer && e.readers > 0));
            }
            for l in held.drain(..) {
                t.release(l).unwrap();
            }
            assert!(t.acquire_write(O).is_ok());
        }
    }

    #[test]
    fn commit_and_replay() {
        let cas = PackStore::in_memory(StoreConfig::default());
        let t = LeaseTable::new();
        let w = t.acquire_write(O).unwrap();
        let h1 = t.commit(&w, b"one", &cas).unwrap();
        assert_eq!(t.head(O), Some(ContentHash::of(b"one")));
        assert_eq!(h1, ContentHash::of(b"one"));
        let h2 = t.commit(&w, b"two", &cas).unwrap();
        assert_eq!(t.entry(O).version, 2);
        assert_eq!(t.head(O), Some(h2));
        let r = t.replay(O, &cas).unwrap();
        assert_eq!(r.diff, 0);
        assert_eq!(r.head, Some(h2));
        t.release(w).unwrap();
        assert!(matches!(t.commit(&w, b"three", &cas), Err(OwnError::StaleLease)));
    }

    #[test]
    fn head_swap_count_is_constant() {
        let cas = PackStore::in_memory(StoreConfig::default());
        let t = LeaseTable::new();
        let w = t.acquire_write(O).unwrap();
        for n in [1u64, 1000] {
            while t.entry(O).version < n {
                t.commit(&w, &t.entry(O).version.to_le_bytes(), &cas).unwrap();
            }
            let before = t.head_swaps(O);
            t.commit(&w, format!("at {n}").as_bytes(), &cas).unwrap();
            assert_eq!(t.head_swaps(O) - before, 1);
        }
    }

    #[test]
    fn acquire_release_restores_entry() {
        let cas = PackStore::in_memory(StoreConfig::default());
        let t = LeaseTable::new();
        let w = t.acquire_write(O).unwrap();
        t.commit(&w, b"base", &cas).unwrap();
        t.release(w).unwrap();
        let before = t.entry(O);
        let r = t.acquire_read(O).unwrap();
        t.release(r).unwrap();
        assert_eq!(t.entry(O), before);
        let w = t.acquire_write(O).unwrap();
        t.release(w).unwrap();
        assert_eq!(t.entry(O), before);
    }

    #[test]
    fn racing_writers_one_wins() {
        let t = LeaseTable::new();
        let wins = AtomicU64::new(0);
        let barrier = std::sync::Barrier::new(16);
        std::thread::scope(|s| {
            for _ in 0..16 {
                s.spawn(|| {
                    barrier.wait();
                    if t.acquire_write(O).is_ok() {
                        wins.fetch_add(1, Ordering::Relaxed);
                    }
                });
            }
        });
        assert_eq!(wins.into_inner(), 1);
    }

    #[test]
    fn small_stress_is_clean() {
        let r = stress_exclusivity(4, 2_000, 4, 1);
        assert_eq!(r.violations, 0);
        assert!(r.acquired > 0);
    }

    #[test]
    fn unguarded_stress_is_detected() {
        let r = stress_unguarded(4, 2_000, 2, 1);
        assert!(r.violations > 0);
    }

    #[test]
    fn stress_csv_has_one_row_per_trial() {
        let r = StressReport { ops: 10, acquired: 7, violations: 2 };
        assert_eq!(stress_csv(&[r, StressReport { violations: 0, ..r }]), "trial,violations\n0,2\n1,0\n");
    }
}
