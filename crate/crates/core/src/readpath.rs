//! Snapshot read path: an LRU tier of decoded node records in front of the
//! pack store, with per-read hit and fragment-chase accounting.

use std::cell::RefCell;
use std::num::NonZeroUsize;
use std::sync::Arc;

use lru::LruCache;
use parking_lot::Mutex;

use crate::cas::{ContentHash, PackStore};
use crate::graph::{Adjacency, GraphError, NodeId};
use crate::snapshot::{NodeRecord, Snapshot, SnapshotError};

/// One node read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessRecord {
    pub hit: bool,
    /// Segments probed on a miss; 1 for a hit.
    pub depth: u32,
    /// Lookups actually performed: the cache probe plus segment probes.
    pub steps: u32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AccessLog {
    pub records: Vec<AccessRecord>,
}

impl AccessLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn hits(&self) -> usize {
        self.records.iter().filter(|r| r.hit).count()
    }

    pub fn hit_rate(&self) -> f64 {
        self.hits() as f64 / self.records.len() as f64
    }

    /// Mean depth over misses, 0 when every read hit.
    pub fn mean_miss_depth(&self) -> f64 {
        let (n, sum) = self
            .records
            .iter()
            .filter(|r| !r.hit)
            .fold((0u64, 0u64), |(n, s), r| (n + 1, s + r.depth as u64));
        if n == 0 {
            0.0
        } else {
            sum as f64 / n as f64
        }
    }

    pub fn mean_steps(&self) -> f64 {
        self.records.iter().map(|r| r.steps as f64).sum::<f64>() / self.records.len() as f64
    }

    pub fn extend(&mut self, other: &AccessLog) {
        self.records.extend_from_slice(&other.records);
    }
}

/// Shared LRU tier of decoded records keyed by content hash.
pub struct ReadCache {
    inner: Mutex<LruCache<ContentHash, Arc<NodeRecord>>>,
}

impl ReadCache {
    pub fn new(capacity: usize) -> Self {
        let cap = NonZeroUsize::new(capacity.max(1)).unwrap();
        Self {
            inner: Mutex::new(LruCache::new(cap)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.inner.lock().cap().get()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        self.inner.lock().clear();
    }

    fn get(&self, h: &ContentHash) -> Option<Arc<NodeRecord>> {
        self.inner.lock().get(h).cloned()
    }

    fn insert(&self, h: ContentHash, r: Arc<NodeRecord>) {
        self.inner.lock().put(h, r);
    }
}

/// Reads one snapshot through a cache, logging every node access.
pub struct SnapshotReader<'a> {
    store: &'a PackStore,
    snap: &'a Snapshot,
    cache: &'a ReadCache,
    log: RefCell<AccessLog>,
}

impl<'a> SnapshotReader<'a> {
    pub fn new(store: &'a PackStore, snap: &'a Snapshot, cache: &'a ReadCache) -> Self {
        Self {
            store,
            snap,
            cache,
            log: RefCell::new(AccessLog::default()),
        }
    }

    pub fn read(&self, id: NodeId) -> Result<Arc<NodeRecord>, SnapshotError> {
        let entry = self
            .snap
            .root
            .get(&id)
            .ok_or(SnapshotError::Graph(GraphError::UnknownNode(id)))?;
        let hash = entry.hash;
        if let Some(r) = self.cache.get(&hash) {
            self.log.borrow_mut().records.push(AccessRecord {
                hit: true,
                depth: 1,
                steps: 1,
            });
            return Ok(r);
        }
        let mut probes = 0u32;
        let mut found = None;
        for seg in &self.snap.segments {
            probes += 1;
            if let Some(b) = self.store.get_in_segment(*seg, &hash) {
                found = Some(b);
                break;
            }
        }
        let bytes = match found {
            Some(b) => b,
            None => {
                probes += 1;
                self.store.get(&hash).map_err(|_| SnapshotError::MissingContent(hash))?
            }
        };
        if self.store.config().verify_on_read && ContentHash::of(&bytes) != hash {
            return Err(SnapshotError::Cas(crate::cas::CasError::CorruptEntry(hash)));
        }
        let rec = Arc::new(NodeRecord::decode(&bytes)?);
        self.cache.insert(hash, rec.clone());
        self.log.borrow_mut().records.push(AccessRecord {
            hit: false,
            depth: probes,
            steps: 1 + probes,
        });
        Ok(rec)
    }

    pub fn take_log(&self) -> AccessLog {
        std::mem::take(&mut *self.log.borrow_mut())
    }
}

impl Adjacency for SnapshotReader<'_> {
    fn has_node(&self, id: NodeId) -> bool {
        self.snap.root.contains_key(&id)
    }

    fn neighbors(&self, id: NodeId) -> Result<Vec<NodeId>, GraphError> {
        let rec = self.read(id).map_err(|e| match e {
            SnapshotError::Graph(g) => g,
            _ => GraphError::UnknownNode(id),
        })?;
        let mut v: Vec<NodeId> = rec.out.iter().map(|(d, _)| *d).collect();
        v.dedup();
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capability::{CapabilityAuthority, Expiry, Region, Rights};
    use crate::cas::StoreConfig;
    use crate::graph::{traverse_khop, Edge, Mutation, Observation, RegionMap, TraversalGuard, WriteAuth};
    use crate::ownership::{LeaseTable, ObjectId};
    use crate::snapshot::Lineage;

    fn chain_lineage(n: u64, segment: u64) -> (Lineage, CapabilityAuthority) {
        let auth = CapabilityAuthority::new();
        let cap = auth.mint_root(Region::all(), Rights::Admin, Expiry::Never, "w");
        let leases = LeaseTable::new();
        let held = [leases.acquire_write(ObjectId(0)).unwrap()];
        let w = WriteAuth {
            authority: &auth,
            cap: &cap,
            leases: &leases,
            held: &held,
            regions: RegionMap::Single(ObjectId(0)),
        };
        let store = PackStore::in_memory(StoreConfig {
            segment_target_bytes: segment,
            ..Default::default()
        });
        let l = Lineage::new(Arc::new(store), None);
        for i in 0..n {
            let mut o = Observation::new();
            o.push(Mutation::AddNode {
                id: NodeId(i),
                label: "v".into(),
                payload: vec![i as u8; 64],
            });
            if i > 0 {
                o.push(Mutation::AddEdge(Edge {
                    src: NodeId(i - 1),
                    dst: NodeId(i),
                    etype: "next".into(),
                }));
            }
            l.commit(&o, i + 1, &w).unwrap();
        }
        (l, auth)
    }

    #[test]
    fn misses_then_hits() {
        let (l, _) = chain_lineage(5, 1 << 20);
        let head = l.head();
        let cache = ReadCache::new(16);
        let r = SnapshotReader::new(l.store(), &head, &cache);
        for i in 0..5 {
            r.read(NodeId(i)).unwrap();
        }
        for i in 0..5 {
            r.read(NodeId(i)).unwrap();
        }
        let log = r.take_log();
        assert_eq!(log.len(), 10);
        assert_eq!(log.hits(), 5);
        assert_eq!(log.mean_miss_depth(), 1.0);
        assert_eq!(log.mean_steps(), 1.5);
    }

    #[test]
    fn chase_depth_bounded_by_fragments() {
        let (l, auth) = chain_lineage(40, 300);
        let head = l.head();
        assert!(head.fragment_count() > 2);
        let c = l.compact(&head, 2).unwrap();
        let cache = ReadCache::new(1);
        let r = SnapshotReader::new(l.store(), &c.snapshot, &cache);
        let cap = auth.mint_root(Region::all(), Rights::Traverse, Expiry::Never, "t");
        let guard = TraversalGuard {
            authority: &auth,
            cap: &cap,
            now: 0,
            verify: true,
            degree_bound: 10,
        };
        let got = traverse_khop(&r, NodeId(0), 3, &guard).unwrap();
        assert_eq!(got.len(), 4);
        let log = r.take_log();
        assert!(log.records.iter().all(|a| a.depth >= 1 && a.depth <= 2));
        let p = 1.0 - log.hit_rate();
        assert!((log.mean_steps() - (1.0 + p * log.mean_miss_depth())).abs() < 1e-12);
    }

    #[test]
    fn unknown_node() {
        let (l, _) = chain_lineage(2, 1 << 20);
        let head = l.head();
        let cache = ReadCache::new(4);
        let r = SnapshotReader::new(l.store(), &head, &cache);
        assert!(matches!(
            r.read(NodeId(9)),
            Err(SnapshotError::Graph(GraphError::UnknownNode(NodeId(9))))
        ));
    }
}
