//! Immutable snapshots, their lineage, observational equivalence and
//! bounded-fragment compaction.
//!
//! A commit turns a staged [`Observation`] into a new [`Snapshot`]: every
//! touched node is serialized into a node record and stored in the pack
//! store, and the root map points each node at its record. The lineage's
//! own commit record is published through an ownership head swap.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use parking_lot::Mutex;
use thiserror::Error;

use crate::capability::Region;
use crate::cas::{CasError, ContentHash, PackStore, SegmentId, ALGO_SHA256};
use crate::graph::{
    EdgeType, GraphError, GraphState, Label, LabelSchema, Mutation, NodeId, Observation, RegionMap, WriteAuth,
};
use crate::ownership::{LeaseTable, ObjectId, OwnError};

pub const DEFAULT_FRAGMENT_BOUND: usize = 2;
/// Ownership object that serializes commits on a lineage.
pub const LINEAGE_OBJECT: ObjectId = ObjectId(u64::MAX);

const NODE_MAGIC: &[u8; 4] = b"NODE";
const SNAP_MAGIC: &[u8; 4] = b"SNAP";
const COMMIT_MAGIC: &[u8; 4] = b"CMIT";

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("tick {tick} is not after the parent tick {parent}")]
    NonMonotoneTick { parent: u64, tick: u64 },
    #[error("content {0} missing from the store")]
    MissingContent(ContentHash),
    #[error("malformed record: {0}")]
    MalformedRecord(&'static str),
    #[error("unknown snapshot {0}")]
    UnknownSnapshot(ContentHash),
    #[error("fragment bound must be at least 1")]
    InvalidBound,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Cas(#[from] CasError),
    #[error(transparent)]
    Own(#[from] OwnError),
}

/// Per-node root entry: record hash plus the opaque capability-scope and
/// ownership-region ids under which it was committed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RootEntry {
    pub hash: ContentHash,
    pub scope: u64,
    pub region: u64,
}

pub type RootMap = im::OrdMap<NodeId, RootEntry>;

/// Serialized form of one node: label, payload and sorted out-edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeRecord {
    pub label: Label,
    pub payload: Vec<u8>,
    pub out: Vec<(NodeId, EdgeType)>,
}

impl NodeRecord {
    pub fn from_graph(g: &GraphState, id: NodeId) -> Option<Self> {
        let n = g.node(id)?;
        Some(Self {
            label: n.label.clone(),
            payload: n.payload.clone(),
            out: g.out_edges(id).cloned().collect(),
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(16 + self.label.0.len() + self.payload.len() + self.out.len() * 12);
        b.extend_from_slice(NODE_MAGIC);
        put_bytes32(&mut b, self.label.0.as_bytes());
        put_bytes32(&mut b, &self.payload);
        b.extend_from_slice(&(self.out.len() as u32).to_be_bytes());
        for (dst, t) in &self.out {
            b.extend_from_slice(&dst.0.to_be_bytes());
            b.extend_from_slice(&(t.0.len() as u16).to_be_bytes());
            b.extend_from_slice(t.0.as_bytes());
        }
        b
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, SnapshotError> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != NODE_MAGIC {
            return Err(SnapshotError::MalformedRecord("bad node magic"));
        }
        let label = r.string32()?;
        let payload = r.bytes32()?.to_vec();
        let n = r.u32()? as usize;
        let mut out = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let dst = NodeId(r.u64()?);
            let len = r.u16()? as usize;
            let t = std::str::from_utf8(r.take(len)?)
                .map_err(|_| SnapshotError::MalformedRecord("edge type is not utf-8"))?;
            out.push((dst, EdgeType(t.to_string())));
        }
        r.finish()?;
        Ok(Self {
            label: Label(label),
            payload,
            out,
        })
    }
}

fn put_bytes32(b: &mut Vec<u8>, s: &[u8]) {
    b.extend_from_slice(&(s.len() as u32).to_be_bytes());
    b.extend_from_slice(s);
}

fn put_hash(b: &mut Vec<u8>, h: &ContentHash) {
    b.push(h.algorithm());
    b.extend_from_slice(h.digest());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], SnapshotError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len());
        let end = end.ok_or(SnapshotError::MalformedRecord("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, SnapshotError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, SnapshotError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, SnapshotError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, SnapshotError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn bytes32(&mut self) -> Result<&'a [u8], SnapshotError> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn string32(&mut self) -> Result<String, SnapshotError> {
        std::str::from_utf8(self.bytes32()?)
            .map(str::to_string)
            .map_err(|_| SnapshotError::MalformedRecord("label is not utf-8"))
    }

    fn hash(&mut self) -> Result<ContentHash, SnapshotError> {
        if self.u8()? != ALGO_SHA256 {
            return Err(SnapshotError::MalformedRecord("unknown hash algorithm"));
        }
        let digest: [u8; 32] = self.take(32)?.try_into().unwrap();
        Ok(ContentHash::from_digest(digest))
    }

    fn finish(&self) -> Result<(), SnapshotError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(SnapshotError::MalformedRecord("trailing bytes"))
        }
    }
}

/// An immutable commit of graph state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub hash: ContentHash,
    pub root: Arc<RootMap>,
    pub parent: Option<ContentHash>,
    pub tick: u64,
    /// Pack segments the root spans, newest first.
    pub segments: Vec<SegmentId>,
}

impl Snapshot {
    /// Canonical serialization covering root, parent and tick.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        canonical_bytes(&self.root, self.parent.as_ref(), self.tick)
    }

    /// Rebuilds a snapshot from canonical bytes; placement is left empty.
    pub fn from_canonical_bytes(bytes: &[u8]) -> Result<Snapshot, SnapshotError> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != SNAP_MAGIC {
            return Err(SnapshotError::MalformedRecord("bad snapshot magic"));
        }
        let tick = r.u64()?;
        let parent = match r.u8()? {
            0 => None,
            1 => Some(r.hash()?),
            _ => return Err(SnapshotError::MalformedRecord("bad parent flag")),
        };
        let n = r.u64()?;
        let mut root = RootMap::new();
        for _ in 0..n {
            let node = NodeId(r.u64()?);
            let hash = r.hash()?;
            let scope = r.u64()?;
            let region = r.u64()?;
            root.insert(node, RootEntry { hash, scope, region });
        }
        r.finish()?;
        Ok(Snapshot {
            hash: full_hash(&root, parent.as_ref(), tick),
            root: Arc::new(root),
            parent,
            tick,
            segments: Vec::new(),
        })
    }

    pub fn compute_hash(&self) -> ContentHash {
        full_hash(&self.root, self.parent.as_ref(), self.tick)
    }

    pub fn fragment_count(&self) -> usize {
        self.segments.len()
    }

    pub fn invariants(&self) -> InvariantVector {
        InvariantVector::of(&self.root)
    }
}

fn canonical_bytes(root: &RootMap, parent: Option<&ContentHash>, tick: u64) -> Vec<u8> {
    let mut b = Vec::with_capacity(22 + root.len() * 57);
    b.extend_from_slice(SNAP_MAGIC);
    b.extend_from_slice(&tick.to_be_bytes());
    match parent {
        None => b.push(0),
        Some(h) => {
            b.push(1);
            put_hash(&mut b, h);
        }
    }
    b.extend_from_slice(&(root.len() as u64).to_be_bytes());
    for (n, e) in root {
        put_entry(&mut b, *n, e);
    }
    b
}

fn put_entry(b: &mut Vec<u8>, n: NodeId, e: &RootEntry) {
    b.extend_from_slice(&n.0.to_be_bytes());
    put_hash(b, &e.hash);
    b.extend_from_slice(&e.scope.to_be_bytes());
    b.extend_from_slice(&e.region.to_be_bytes());
}

/// Node ids per hashed bucket of the root map.
const BUCKET_BITS: u32 = 6;

type BucketDigests = BTreeMap<u64, ContentHash>;

fn bucket_digest(root: &RootMap, bucket: u64) -> Option<ContentHash> {
    let lo = NodeId(bucket << BUCKET_BITS);
    let hi = NodeId(lo.0 | ((1 << BUCKET_BITS) - 1));
    let mut b = Vec::new();
    for (n, e) in root.range(lo..=hi) {
        put_entry(&mut b, *n, e);
    }
    (!b.is_empty()).then(|| ContentHash::of(&b))
}

fn all_digests(root: &RootMap) -> BucketDigests {
    let buckets: BTreeSet<u64> = root.keys().map(|n| n.0 >> BUCKET_BITS).collect();
    buckets
        .into_iter()
        .filter_map(|k| bucket_digest(root, k).map(|d| (k, d)))
        .collect()
}

fn refresh_digests(digests: &mut BucketDigests, root: &RootMap, touched: impl IntoIterator<Item = NodeId>) {
    let buckets: BTreeSet<u64> = touched.into_iter().map(|n| n.0 >> BUCKET_BITS).collect();
    for k in buckets {
        match bucket_digest(root, k) {
            Some(d) => digests.insert(k, d),
            None => digests.remove(&k),
        };
    }
}

/// Snapshot hash over tick, parent and the bucket digests of the root, so
/// a commit rehashes only the buckets it touched.
fn snapshot_hash(digests: &BucketDigests, len: usize, parent: Option<&ContentHash>, tick: u64) -> ContentHash {
    let mut b = Vec::with_capacity(64 + digests.len() * 40);
    b.extend_from_slice(SNAP_MAGIC);
    b.extend_from_slice(&tick.to_be_bytes());
    match parent {
        None => b.push(0),
        Some(h) => {
            b.push(1);
            put_hash(&mut b, h);
        }
    }
    b.extend_from_slice(&(len as u64).to_be_bytes());
    for (k, d) in digests {
        b.extend_from_slice(&k.to_be_bytes());
        put_hash(&mut b, d);
    }
    ContentHash::of(&b)
}

fn full_hash(root: &RootMap, parent: Option<&ContentHash>, tick: u64) -> ContentHash {
    snapshot_hash(&all_digests(root), root.len(), parent, tick)
}

/// The data observational equivalence compares: content hashes, capability
/// scopes and ownership regions per node.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct InvariantVector {
    pub content: BTreeSet<(NodeId, ContentHash)>,
    pub scopes: BTreeMap<NodeId, u64>,
    pub regions: BTreeMap<NodeId, u64>,
}

impl InvariantVector {
    pub fn of(root: &RootMap) -> Self {
        let mut v = InvariantVector::default();
        for (n, e) in root {
            v.content.insert((*n, e.hash));
            v.scopes.insert(*n, e.scope);
            v.regions.insert(*n, e.region);
        }
        v
    }

    /// Number of nodes whose entry differs between the two vectors.
    pub fn diff(&self, other: &InvariantVector) -> usize {
        let nodes: BTreeSet<NodeId> = self.scopes.keys().chain(other.scopes.keys()).copied().collect();
        let a: BTreeMap<_, _> = self.content.iter().copied().collect();
        let b: BTreeMap<_, _> = other.content.iter().copied().collect();
        nodes
            .into_iter()
            .filter(|n| {
                a.get(n) != b.get(n)
                    || self.scopes.get(n) != other.scopes.get(n)
                    || self.regions.get(n) != other.regions.get(n)
            })
            .count()
    }
}

/// Observational equivalence of two snapshots.
pub fn obs_equiv(a: &Snapshot, b: &Snapshot) -> bool {
    a.root == b.root || a.invariants() == b.invariants()
}

/// Graph state described by a snapshot, read from the pack store.
pub fn view(store: &PackStore, snap: &Snapshot) -> Result<GraphState, SnapshotError> {
    let mut records = Vec::with_capacity(snap.root.len());
    for (n, e) in snap.root.iter() {
        let bytes = store.get(&e.hash).map_err(|err| match err {
            CasError::NotFound(h) => SnapshotError::MissingContent(h),
            other => SnapshotError::Cas(other),
        })?;
        records.push((*n, NodeRecord::decode(&bytes)?));
    }
    let mut g = GraphState::new();
    for (n, r) in &records {
        g.insert_node(*n, r.label.clone(), r.payload.clone())?;
    }
    for (n, r) in records {
        for (dst, t) in r.out {
            g.insert_edge(n, dst, t)?;
        }
    }
    Ok(g)
}

/// One committed link: the snapshot plus what is needed to replay it.
#[derive(Debug, Clone)]
pub struct ChainLink {
    pub snapshot: Snapshot,
    pub observation: Observation,
    pub scope: u64,
    pub regions: RegionMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// Recomputed snapshot hash differs from the stored one.
    HashMismatch,
    /// Parent link does not name the previous snapshot.
    BrokenParent,
    NonMonotoneTick,
    /// Replaying the observations does not reproduce the snapshot.
    ReplayDiff(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LineageViolation {
    /// Index of the offending link, 0 being the genesis snapshot.
    pub link: usize,
    pub tick: u64,
    pub kind: ViolationKind,
}

/// Checks hash-chain integrity, monotone ticks and replay equality over a
/// chain ordered from genesis to head.
pub fn check_chain(links: &[ChainLink]) -> Result<(), LineageViolation> {
    for (i, l) in links.iter().enumerate() {
        let s = &l.snapshot;
        let fail = |kind| LineageViolation {
            link: i,
            tick: s.tick,
            kind,
        };
        if s.compute_hash() != s.hash {
            return Err(fail(ViolationKind::HashMismatch));
        }
        let expected_parent = if i == 0 { None } else { Some(links[i - 1].snapshot.hash) };
        if s.parent != expected_parent {
            return Err(fail(ViolationKind::BrokenParent));
        }
        if i > 0 && s.tick <= links[i - 1].snapshot.tick {
            return Err(fail(ViolationKind::NonMonotoneTick));
        }
    }
    let replay = Lineage::new(Arc::new(PackStore::in_memory(Default::default())), None);
    for (i, l) in links.iter().enumerate().skip(1) {
        let fail = |kind| LineageViolation {
            link: i,
            tick: l.snapshot.tick,
            kind,
        };
        let got = match replay.commit_inner(&l.observation, l.snapshot.tick, l.scope, l.regions, None) {
            Ok(s) => s,
            Err(_) => return Err(fail(ViolationKind::ReplayDiff(usize::MAX))),
        };
        let diff = got.invariants().diff(&l.snapshot.invariants());
        if diff != 0 {
            return Err(fail(ViolationKind::ReplayDiff(diff)));
        }
    }
    Ok(())
}

/// Outcome of a compaction.
#[derive(Debug, Clone)]
pub struct Compaction {
    pub snapshot: Snapshot,
    pub rewritten_bytes: u64,
}

struct LineageInner {
    links: Vec<ChainLink>,
    by_hash: HashMap<ContentHash, usize>,
    head_graph: GraphState,
    /// Bucket digests of the head's root map.
    head_digests: BucketDigests,
    placement: HashMap<NodeId, SegmentId>,
    seg_counts: BTreeMap<SegmentId, usize>,
}

impl LineageInner {
    fn place(&mut self, node: NodeId, seg: Option<SegmentId>) {
        if let Some(old) = self.placement.remove(&node) {
            if let Some(c) = self.seg_counts.get_mut(&old) {
                *c -= 1;
                if *c == 0 {
                    self.seg_counts.remove(&old);
                }
            }
        }
        if let Some(seg) = seg {
            self.placement.insert(node, seg);
            *self.seg_counts.entry(seg).or_default() += 1;
        }
    }

    fn segments_newest_first(&self) -> Vec<SegmentId> {
        self.seg_counts.keys().rev().copied().collect()
    }

    fn head(&self) -> &Snapshot {
        &self.links.last().expect("genesis always present").snapshot
    }
}

/// A single-writer chain of snapshots over one pack store.
pub struct Lineage {
    store: Arc<PackStore>,
    leases: LeaseTable,
    schema: Option<LabelSchema>,
    inner: Mutex<LineageInner>,
}

impl Lineage {
    /// Starts a lineage at an empty genesis snapshot with tick 0.
    pub fn new(store: Arc<PackStore>, schema: Option<LabelSchema>) -> Self {
        let root = Arc::new(RootMap::new());
        let genesis = Snapshot {
            hash: full_hash(&root, None, 0),
            root,
            parent: None,
            tick: 0,
            segments: Vec::new(),
        };
        let link = ChainLink {
            snapshot: genesis.clone(),
            observation: Observation::new(),
            scope: 0,
            regions: RegionMap::PerNode,
        };
        Self {
            store,
            leases: LeaseTable::new(),
            schema,
            inner: Mutex::new(LineageInner {
                by_hash: HashMap::from([(genesis.hash, 0)]),
                links: vec![link],
                head_graph: GraphState::new(),
                head_digests: BucketDigests::new(),
                placement: HashMap::new(),
                seg_counts: BTreeMap::new(),
            }),
        }
    }

    pub fn store(&self) -> &Arc<PackStore> {
        &self.store
    }

    pub fn schema(&self) -> Option<&LabelSchema> {
        self.schema.as_ref()
    }

    pub fn head(&self) -> Snapshot {
        self.inner.lock().head().clone()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().links.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, hash: &ContentHash) -> Option<Snapshot> {
        let inner = self.inner.lock();
        inner.by_hash.get(hash).map(|i| inner.links[*i].snapshot.clone())
    }

    /// Runs `f` on the head's materialized graph.
    pub fn with_head_graph<R>(&self, f: impl FnOnce(&GraphState) -> R) -> R {
        f(&self.inner.lock().head_graph)
    }

    /// Publishes a checked observation as a new snapshot.
    pub fn commit(&self, obs: &Observation, tick: u64, auth: &WriteAuth<'_>) -> Result<Snapshot, SnapshotError> {
        self.commit_inner(obs, tick, auth.cap.id.0, auth.regions, Some(auth))
    }

    /// Commit without lease or capability checks, recording the given scope
    /// and regions. Used to rebuild and replay lineages.
    pub(crate) fn import(&self, obs: &Observation, tick: u64, scope: u64, regions: RegionMap) -> Result<Snapshot, SnapshotError> {
        self.commit_inner(obs, tick, scope, regions, None)
    }

    fn commit_inner(
        &self,
        obs: &Observation,
        tick: u64,
        scope: u64,
        regions: RegionMap,
        auth: Option<&WriteAuth<'_>>,
    ) -> Result<Snapshot, SnapshotError> {
        let mut guard = self.inner.lock();
        let inner = &mut *guard;
        let parent = inner.head().clone();
        if tick <= parent.tick {
            return Err(SnapshotError::NonMonotoneTick { parent: parent.tick, tick });
        }
        let touched = apply_checked(&mut inner.head_graph, obs, self.schema.as_ref(), auth)?;
        let mut root = (*parent.root).clone();
        let mut delta = Vec::new();
        for n in &touched {
            let entry = match NodeRecord::from_graph(&inner.head_graph, *n) {
                Some(rec) => {
                    let hash = self.store.put(&rec.encode())?;
                    let e = RootEntry {
                        hash,
                        scope,
                        region: regions.region_of(*n).0,
                    };
                    root.insert(*n, e);
                    inner.place(*n, self.store.locate(&hash));
                    Some(e)
                }
                None => {
                    root.remove(n);
                    inner.place(*n, None);
                    None
                }
            };
            delta.push((*n, entry));
        }
        refresh_digests(&mut inner.head_digests, &root, touched.iter().copied());
        let snap = Snapshot {
            hash: snapshot_hash(&inner.head_digests, root.len(), Some(&parent.hash), tick),
            root: Arc::new(root),
            parent: Some(parent.hash),
            tick,
            segments: inner.segments_newest_first(),
        };
        self.publish(&snap, &delta)?;
        inner.by_hash.insert(snap.hash, inner.links.len());
        inner.links.push(ChainLink {
            snapshot: snap.clone(),
            observation: obs.clone(),
            scope,
            regions,
        });
        Ok(snap)
    }

    /// Stores the commit record and swaps the lineage head to it.
    fn publish(&self, snap: &Snapshot, delta: &[(NodeId, Option<RootEntry>)]) -> Result<(), SnapshotError> {
        let mut b = Vec::with_capacity(90 + delta.len() * 57);
        b.extend_from_slice(COMMIT_MAGIC);
        put_hash(&mut b, &snap.hash);
        put_hash(&mut b, &snap.parent.expect("commits have parents"));
        b.extend_from_slice(&snap.tick.to_be_bytes());
        b.extend_from_slice(&(delta.len() as u64).to_be_bytes());
        for (n, e) in delta {
            b.extend_from_slice(&n.0.to_be_bytes());
            match e {
                Some(e) => {
                    b.push(1);
                    put_hash(&mut b, &e.hash);
                    b.extend_from_slice(&e.scope.to_be_bytes());
                    b.extend_from_slice(&e.region.to_be_bytes());
                }
                None => b.push(0),
            }
        }
        let lease = self.leases.acquire_write(LINEAGE_OBJECT)?;
        let res = self.leases.commit(&lease, &b, &self.store);
        self.leases.release(lease)?;
        res?;
        Ok(())
    }

    /// Hash of the latest published commit record.
    pub fn published_head(&self) -> Option<ContentHash> {
        self.leases.head(LINEAGE_OBJECT)
    }

    pub fn head_swaps(&self) -> u64 {
        self.leases.head_swaps(LINEAGE_OBJECT)
    }

    /// Links from genesis to `head`.
    pub fn chain(&self, head: &Snapshot) -> Result<Vec<ChainLink>, SnapshotError> {
        let inner = self.inner.lock();
        let mut idx = *inner
            .by_hash
            .get(&head.hash)
            .ok_or(SnapshotError::UnknownSnapshot(head.hash))?;
        let mut out = vec![inner.links[idx].clone()];
        while let Some(p) = inner.links[idx].snapshot.parent {
            idx = *inner.by_hash.get(&p).ok_or(SnapshotError::UnknownSnapshot(p))?;
            out.push(inner.links[idx].clone());
        }
        out.reverse();
        Ok(out)
    }

    pub fn lineage_check(&self, head: &Snapshot) -> Result<(), LineageViolation> {
        let links = self.chain(head).map_err(|_| LineageViolation {
            link: 0,
            tick: head.tick,
            kind: ViolationKind::BrokenParent,
        })?;
        check_chain(&links)
    }

    pub fn view(&self, snap: &Snapshot) -> Result<GraphState, SnapshotError> {
        view(&self.store, snap)
    }

    /// Rewrites `snap`'s content into at most `k` pack segments. The
    /// `k - 1` segments holding the most root entries stay in place.
    pub fn compact(&self, snap: &Snapshot, k: usize) -> Result<Compaction, SnapshotError> {
        if k == 0 {
            return Err(SnapshotError::InvalidBound);
        }
        let mut inner = self.inner.lock();
        let mut by_seg: BTreeMap<SegmentId, Vec<ContentHash>> = BTreeMap::new();
        for e in snap.root.values() {
            let seg = self.store.locate(&e.hash).ok_or(SnapshotError::MissingContent(e.hash))?;
            by_seg.entry(seg).or_default().push(e.hash);
        }
        if by_seg.len() <= k {
            let mut out = snap.clone();
            out.segments = by_seg.keys().rev().copied().collect();
            return Ok(Compaction {
                snapshot: out,
                rewritten_bytes: 0,
            });
        }
        let mut ranked: Vec<_> = by_seg.iter().map(|(s, v)| (v.len(), *s)).collect();
        ranked.sort_by(|a, b| b.cmp(a));
        let keep: BTreeSet<SegmentId> = ranked.iter().take(k - 1).map(|(_, s)| *s).collect();
        let moved: Vec<ContentHash> = by_seg
            .iter()
            .filter(|(s, _)| !keep.contains(s))
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        let (new_seg, bytes) = self.store.rewrite(&moved)?;
        let mut segs: BTreeSet<SegmentId> = keep;
        segs.insert(new_seg);
        let mut out = snap.clone();
        out.segments = segs.into_iter().rev().collect();
        if let Some(i) = inner.by_hash.get(&snap.hash).copied() {
            inner.links[i].snapshot.segments = out.segments.clone();
        }
        // moved records may be shared with the head
        self.rebuild_placement(&mut inner);
        let head_segments = inner.segments_newest_first();
        inner.links.last_mut().expect("genesis always present").snapshot.segments = head_segments;
        Ok(Compaction {
            snapshot: out,
            rewritten_bytes: bytes,
        })
    }

    fn rebuild_placement(&self, inner: &mut LineageInner) {
        let root = inner.head().root.clone();
        inner.placement.clear();
        inner.seg_counts.clear();
        for (n, e) in root.iter() {
            inner.place(*n, self.store.locate(&e.hash));
        }
    }

    /// Compacts the head when it spans more than `k` segments.
    pub fn compact_head(&self, k: usize) -> Result<Compaction, SnapshotError> {
        let head = self.head();
        self.compact(&head, k)
    }

    /// The part of `snap` inside `region`, with edges leaving the region
    /// dropped. The result is derived, not appended to the lineage.
    pub fn restrict(&self, snap: &Snapshot, region: &Region) -> Result<Snapshot, SnapshotError> {
        let g = self.view(snap)?.restrict(region);
        let mut root = RootMap::new();
        for (n, e) in snap.root.iter() {
            if !region.contains(n.0) {
                continue;
            }
            let rec = NodeRecord::from_graph(&g, *n).expect("restricted node present");
            let hash = self.store.put(&rec.encode())?;
            root.insert(*n, RootEntry { hash, ..*e });
        }
        Ok(Snapshot {
            hash: full_hash(&root, Some(&snap.hash), snap.tick),
            root: Arc::new(root),
            parent: Some(snap.hash),
            tick: snap.tick,
            segments: snap.segments.clone(),
        })
    }

    /// `tick,snapshot_hash,parent_hash,fragment_count` rows from genesis on.
    pub fn report_csv(&self) -> String {
        let inner = self.inner.lock();
        let mut s = String::from("tick,snapshot_hash,parent_hash,fragment_count\n");
        for l in &inner.links {
            let sn = &l.snapshot;
            let parent = sn.parent.map(|p| p.to_hex()).unwrap_or_default();
            s.push_str(&format!("{},{},{},{}\n", sn.tick, sn.hash.to_hex(), parent, sn.fragment_count()));
        }
        s
    }

    /// Independent lineage over a forked store, sharing nothing.
    pub fn fork(&self, store: Arc<PackStore>) -> Lineage {
        let inner = self.inner.lock();
        Lineage {
            store,
            leases: self.leases.fork(),
            schema: self.schema.clone(),
            inner: Mutex::new(LineageInner {
                links: inner.links.clone(),
                by_hash: inner.by_hash.clone(),
                head_graph: inner.head_graph.clone(),
                head_digests: inner.head_digests.clone(),
                placement: inner.placement.clone(),
                seg_counts: inner.seg_counts.clone(),
            }),
        }
    }
}

/// Applies `obs` to `g` after checking each mutation, returning the nodes
/// whose records changed. On error `g` is left unchanged.
fn apply_checked(
    g: &mut GraphState,
    obs: &Observation,
    schema: Option<&LabelSchema>,
    auth: Option<&WriteAuth<'_>>,
) -> Result<BTreeSet<NodeId>, GraphError> {
    let mut undo: Vec<Vec<Mutation>> = Vec::new();
    let mut touched = BTreeSet::new();
    let mut result = Ok(());
    for m in &obs.mutations {
        let step = (|| {
            let changed = g.touched_by(m);
            let mut nodes = changed.clone();
            if let Mutation::AddEdge(e) = m {
                if let Some(s) = schema {
                    s.check_edge(g, e.src, e.dst, &e.etype)?;
                }
                nodes.push(e.dst);
            }
            if let Some(a) = auth {
                a.check(&nodes)?;
            }
            let inverse = inverse_of(g, m)?;
            g.apply(m)?;
            touched.extend(changed);
            Ok(inverse)
        })();
        match step {
            Ok(inv) => undo.push(inv),
            Err(e) => {
                result = Err(e);
                break;
            }
        }
    }
    if let Err(e) = result {
        for inv in undo.into_iter().rev() {
            for m in inv {
                g.apply(&m).expect("inverse applies");
            }
        }
        return Err(e);
    }
    Ok(touched)
}

/// Mutations that undo `m` on `g`, in application order.
fn inverse_of(g: &GraphState, m: &Mutation) -> Result<Vec<Mutation>, GraphError> {
    Ok(match m {
        Mutation::AddNode { id, .. } => {
            if g.contains(*id) {
                return Err(GraphError::DuplicateNode(*id));
            }
            vec![Mutation::RemoveNode { id: *id }]
        }
        Mutation::RemoveNode { id } => {
            let n = g.node(*id).ok_or(GraphError::UnknownNode(*id))?;
            let mut v = vec![Mutation::AddNode {
                id: *id,
                label: n.label.clone(),
                payload: n.payload.clone(),
            }];
            v.extend(g.edges().filter(|e| e.src == *id || e.dst == *id).map(Mutation::AddEdge));
            v
        }
        Mutation::AddEdge(e) => {
            if g.out_edges(e.src).any(|(d, t)| *d == e.dst && *t == e.etype) {
                Vec::new()
            } else {
                vec![Mutation::RemoveEdge(e.clone())]
            }
        }
        Mutation::RemoveEdge(e) => vec![Mutation::AddEdge(e.clone())],
        Mutation::SetPayload { id, .. } => {
            let n = g.node(*id).ok_or(GraphError::UnknownNode(*id))?;
            vec![Mutation::SetPayload {
                id: *id,
                payload: n.payload.clone(),
            }]
        }
    })
}

/// Builds `g` from nothing: every node, then every edge.
pub fn observation_of(g: &GraphState) -> Observation {
    let mut o = Observation::new();
    for (id, n) in g.nodes() {
        o.push(Mutation::AddNode {
            id,
            label: n.label.clone(),
            payload: n.payload.clone(),
        });
    }
    for e in g.edges() {
        o.push(Mutation::AddEdge(e));
    }
    o
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capability::{Capability, CapabilityAuthority, Expiry, Rights};
    use crate::cas::StoreConfig;
    use crate::graph::Edge;
    use crate::ownership::WriteLease;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Fixture {
        auth: CapabilityAuthority,
        cap: Capability,
        leases: LeaseTable,
        held: Vec<WriteLease>,
    }

    const GRAPH: ObjectId = ObjectId(7);

    impl Fixture {
        fn new() -> Self {
            let auth = CapabilityAuthority::new();
            let cap = auth.mint_root(Region::all(), Rights::Admin, Expiry::Never, "w");
            let leases = LeaseTable::new();
            let held = vec![leases.acquire_write(GRAPH).unwrap()];
            Self { auth, cap, leases, held }
        }

        fn w(&self) -> WriteAuth<'_> {
            WriteAuth {
                authority: &self.auth,
                cap: &self.cap,
                leases: &self.leases,
                held: &self.held,
                regions: RegionMap::Single(GRAPH),
            }
        }
    }

    fn lineage(segment: u64) -> Lineage {
        let cfg = StoreConfig {
            segment_target_bytes: segment,
            ..Default::default()
        };
        Lineage::new(Arc::new(PackStore::in_memory(cfg)), None)
    }

    fn add(id: u64, label: &str) -> Mutation {
        Mutation::AddNode {
            id: NodeId(id),
            label: label.into(),
            payload: vec![id as u8; 4],
        }
    }

    fn edge(s: u64, d: u64) -> Mutation {
        Mutation::AddEdge(Edge {
            src: NodeId(s),
            dst: NodeId(d),
            etype: "e".into(),
        })
    }

    fn random_obs(rng: &mut ChaCha8Rng, g: &GraphState, len: usize, max_nodes: u64) -> Observation {
        let mut g = g.clone();
        let mut o = Observation::new();
        for _ in 0..len {
            let ids: Vec<_> = g.node_ids().collect();
            let m = match rng.random_range(0..5) {
                0 | 1 if (g.node_count() as u64) < max_nodes => {
                    let id = (0..max_nodes).find(|i| !g.contains(NodeId(*i))).unwrap();
                    add(id, ["a", "b"][rng.random_range(0..2)])
                }
                2 if !ids.is_empty() => Mutation::RemoveNode {
                    id: ids[rng.random_range(0..ids.len())],
                },
                3 if !ids.is_empty() => Mutation::SetPayload {
                    id: ids[rng.random_range(0..ids.len())],
                    payload: vec![rng.random(); 3],
                },
                _ if !ids.is_empty() => {
                    let s = ids[rng.random_range(0..ids.len())];
                    let d = ids[rng.random_range(0..ids.len())];
                    edge(s.0, d.0)
                }
                _ => continue,
            };
            g.apply(&m).unwrap();
            o.push(m);
        }
        o
    }

    #[test]
    fn node_record_roundtrip() {
        let r = NodeRecord {
            label: "person".into(),
            payload: vec![1, 2, 3],
            out: vec![(NodeId(4), "knows".into()), (NodeId(9), "likes".into())],
        };
        assert_eq!(NodeRecord::decode(&r.encode()).unwrap(), r);
        let mut bad = r.encode();
        bad.push(0);
        assert!(NodeRecord::decode(&bad).is_err());
        assert!(NodeRecord::decode(&bad[..10]).is_err());
    }

    #[test]
    fn commit_and_view_roundtrip() {
        let f = Fixture::new();
        let l = lineage(1 << 20);
        let obs = Observation {
            mutations: vec![add(0, "a"), add(1, "b"), edge(0, 1)],
        };
        let s1 = l.commit(&obs, 1, &f.w()).unwrap();
        let mut expect = GraphState::new();
        obs.apply_to(&mut expect).unwrap();
        assert_eq!(l.view(&s1).unwrap(), expect);
        assert_eq!(s1.root.len(), 2);
        assert_eq!(s1.root[&NodeId(0)].scope, f.cap.id.0);
        assert_eq!(s1.root[&NodeId(0)].region, GRAPH.0);

        let empty = l.commit(&Observation::new(), 2, &f.w()).unwrap();
        assert_eq!(empty.root, s1.root);
        assert_eq!(empty.parent, Some(s1.hash));

        let s3 = l
            .commit(&Observation { mutations: vec![add(2, "a")] }, 3, &f.w())
            .unwrap();
        let changed = s3.invariants().diff(&empty.invariants());
        assert_eq!(changed, 1);
        assert_eq!(l.view(&s1).unwrap(), expect);
        assert!(l.published_head().is_some());
        assert_eq!(l.head_swaps(), 3);
    }

    #[test]
    fn non_monotone_tick_and_failed_commit_leave_head() {
        let f = Fixture::new();
        let l = lineage(1 << 20);
        l.commit(&Observation { mutations: vec![add(0, "a")] }, 5, &f.w()).unwrap();
        assert!(matches!(
            l.commit(&Observation::new(), 5, &f.w()),
            Err(SnapshotError::NonMonotoneTick { parent: 5, tick: 5 })
        ));
        let head = l.head();
        let bad = Observation {
            mutations: vec![add(1, "b"), edge(1, 0), edge(1, 42)],
        };
        assert!(l.commit(&bad, 6, &f.w()).is_err());
        assert_eq!(l.head(), head);
        l.with_head_graph(|g| assert_eq!(g.node_count(), 1));
        assert_eq!(l.view(&head).unwrap().node_count(), 1);
    }

    #[test]
    fn commit_requires_lease_and_write_rights() {
        let f = Fixture::new();
        let l = lineage(1 << 20);
        let ro = f.auth.grant(&f.cap, &Region::all(), Rights::Read, None, "r").unwrap();
        let w = WriteAuth { cap: &ro, ..f.w() };
        assert!(matches!(
            l.commit(&Observation { mutations: vec![add(0, "a")] }, 1, &w),
            Err(SnapshotError::Graph(GraphError::CapabilityRejected(_)))
        ));
        f.leases.release(f.held[0]).unwrap();
        assert!(matches!(
            l.commit(&Observation { mutations: vec![add(0, "a")] }, 1, &f.w()),
            Err(SnapshotError::Graph(GraphError::LeaseRequired(GRAPH)))
        ));
    }

    #[test]
    fn functor_preserves_composition() {
        let f = Fixture::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let o1 = random_obs(&mut rng, &GraphState::new(), 8, 10);
            let mut mid = GraphState::new();
            o1.apply_to(&mut mid).unwrap();
            let o2 = random_obs(&mut rng, &mid, 8, 10);
            let a = lineage(1 << 20);
            let sa = a.commit(&o1.then(&o2), 1, &f.w()).unwrap();
            let b = lineage(1 << 20);
            b.commit(&o1, 1, &f.w()).unwrap();
            let sb = b.commit(&o2, 2, &f.w()).unwrap();
            assert!(obs_equiv(&sa, &sb));
        }
    }

    #[test]
    fn lineage_check_and_tamper() {
        let f = Fixture::new();
        let l = lineage(4096);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for t in 1..=60 {
            let o = l.with_head_graph(|g| random_obs(&mut rng, g, 3, 12));
            l.commit(&o, t * 2, &f.w()).unwrap();
        }
        let head = l.head();
        assert_eq!(l.lineage_check(&head), Ok(()));
        let links = l.chain(&head).unwrap();
        assert_eq!(links.len(), 61);
        for i in [1usize, 20, 60] {
            let mut bytes = links[i].snapshot.canonical_bytes();
            let pos = rng.random_range(0..bytes.len());
            bytes[pos] ^= 1 << rng.random_range(0..8);
            let mut t = links.clone();
            if let Ok(mut s) = Snapshot::from_canonical_bytes(&bytes) {
                s.hash = links[i].snapshot.hash;
                t[i].snapshot = s;
                let v = check_chain(&t).unwrap_err();
                assert_eq!(v.link, i);
            }
        }
        let mut t = links.clone();
        t[30].observation.push(add(99, "z"));
        assert!(matches!(check_chain(&t), Err(LineageViolation { link: 30, kind: ViolationKind::ReplayDiff(_), .. })));
    }

    #[test]
    fn canonical_bytes_roundtrip() {
        let f = Fixture::new();
        let l = lineage(1 << 20);
        let s = l
            .commit(&Observation { mutations: vec![add(0, "a"), add(3, "b"), edge(3, 0)] }, 1, &f.w())
            .unwrap();
        let back = Snapshot::from_canonical_bytes(&s.canonical_bytes()).unwrap();
        assert_eq!(back.hash, s.hash);
        assert_eq!(back.root, s.root);
        assert_eq!(back.parent, s.parent);
    }

    #[test]
    fn compaction_bounds_fragments_and_preserves_view() {
        let f = Fixture::new();
        for k in [1usize, 2, 4] {
            let l = lineage(256);
            let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
            for t in 1..=30 {
                let o = l.with_head_graph(|g| random_obs(&mut rng, g, 4, 40));
                l.commit(&o, t, &f.w()).unwrap();
            }
            let head = l.head();
            let before = l.view(&head).unwrap();
            let c = l.compact(&head, k).unwrap();
            assert!(c.snapshot.fragment_count() <= k);
            assert!(obs_equiv(&head, &c.snapshot));
            assert_eq!(l.view(&c.snapshot).unwrap(), before);
            let again = l.compact(&c.snapshot, k).unwrap();
            assert_eq!(again.rewritten_bytes, 0);
            assert_eq!(l.head().fragment_count(), c.snapshot.fragment_count());
        }
        assert!(matches!(lineage(256).compact_head(0), Err(SnapshotError::InvalidBound)));
    }

    #[test]
    fn obs_equiv_is_equivalence() {
        let f = Fixture::new();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut snaps = Vec::new();
        for _ in 0..30 {
            let l = lineage(1 << 20);
            let o = random_obs(&mut rng, &GraphState::new(), 3, 3);
            snaps.push(l.commit(&o, 1, &f.w()).unwrap());
        }
        for a in &snaps {
            assert!(obs_equiv(a, a));
            for b in &snaps {
                assert_eq!(obs_equiv(a, b), obs_equiv(b, a));
                for c in &snaps {
                    if obs_equiv(a, b) && obs_equiv(b, c) {
                        assert!(obs_equiv(a, c));
                    }
                }
            }
        }
    }

    #[test]
    fn naturality_square() {
        let f = Fixture::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let base = random_obs(&mut rng, &GraphState::new(), 12, 10);
            let mut g = GraphState::new();
            base.apply_to(&mut g).unwrap();
            let obs = random_obs(&mut rng, &g, 4, 10);
            let region = Region::from_points((0..10).filter(|_| rng.random_bool(0.5)));

            let b = lineage(1 << 20);
            b.commit(&base, 1, &f.w()).unwrap();
            let sb = b.commit(&obs, 2, &f.w()).unwrap();
            let rb = b.restrict(&sb, &region).unwrap();

            let mut x = g.clone();
            obs.apply_to(&mut x).unwrap();
            let a = lineage(1 << 20);
            let sa = a.commit(&observation_of(&x.restrict(&region)), 1, &f.w()).unwrap();

            assert!(obs_equiv(&sa, &rb));
            assert_eq!(a.view(&sa).unwrap(), b.view(&rb).unwrap());
        }
    }

    #[test]
    fn report_csv_lists_every_link() {
        let f = Fixture::new();
        let l = lineage(1 << 20);
        l.commit(&Observation { mutations: vec![add(0, "a")] }, 1, &f.w()).unwrap();
        let csv = l.report_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "tick,snapshot_hash,parent_hash,fragment_count");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("1,"));
    }
}
