//! Worlds backed by the composed engine.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::capability::{Capability, CapabilityAuthority, Expiry, Region, Rights};
use crate::cas::{PackStore, StoreConfig};
use crate::graph::{
    traverse_khop, Edge, EdgeType, GraphState, Label, Mutation, NodeId, Observation, RegionMap, TraversalGuard,
    WriteAuth, DEFAULT_DEGREE_BOUND,
};
use crate::ownership::{Lease, LeaseTable, ObjectId, WriteLease};
use crate::readpath::{ReadCache, SnapshotReader};
use crate::snapshot::{observation_of, InvariantVector, Lineage, Snapshot};

use super::{Event, EventError, GenView, Op, Update, World};

const LINK: &str = "link";

pub(crate) fn put_u32(b: &mut Vec<u8>, v: u32) {
    b.extend_from_slice(&v.to_be_bytes());
}

pub(crate) fn put_u64(b: &mut Vec<u8>, v: u64) {
    b.extend_from_slice(&v.to_be_bytes());
}

pub(crate) fn put_blob(b: &mut Vec<u8>, v: &[u8]) {
    put_u32(b, v.len() as u32);
    b.extend_from_slice(v);
}

/// Appends `count, (event id, bytes)*`.
pub(crate) fn put_reads(b: &mut Vec<u8>, reads: &BTreeMap<u64, Vec<u8>>) {
    put_u32(b, reads.len() as u32);
    for (id, r) in reads {
        put_u64(b, *id);
        put_blob(b, r);
    }
}

pub(crate) fn ids_bytes<I: IntoIterator<Item = u64>>(ids: I) -> Vec<u8> {
    let mut b = Vec::new();
    for i in ids {
        put_u64(&mut b, i);
    }
    b
}

fn iv_bytes(iv: &InvariantVector) -> Vec<u8> {
    let mut b = Vec::with_capacity(iv.content.len() * 49);
    put_u32(&mut b, iv.content.len() as u32);
    for (n, h) in &iv.content {
        put_u64(&mut b, n.0);
        b.extend_from_slice(h.digest());
        put_u64(&mut b, iv.scopes[n]);
        put_u64(&mut b, iv.regions[n]);
    }
    b
}

/// Graph projections over a snapshot lineage with per-node write leases.
pub struct LineageWorld {
    store: Arc<PackStore>,
    lineage: Lineage,
    authority: Arc<CapabilityAuthority>,
    writer: Capability,
    reader: Capability,
    leases: LeaseTable,
    held: BTreeMap<u64, Vec<WriteLease>>,
    pinned: BTreeMap<u64, Snapshot>,
    reads: BTreeMap<u64, Vec<u8>>,
    tick: u64,
    store_config: StoreConfig,
}

impl LineageWorld {
    /// Commits `graph` as the first snapshot. `segment_bytes` sets the pack
    /// segment target so that history spans several fragments.
    pub fn new(graph: &GraphState, segment_bytes: u64) -> Self {
        let authority = Arc::new(CapabilityAuthority::new());
        let root = authority.mint_root(Region::all(), Rights::Admin, Expiry::Never, "owner");
        let writer = authority
            .grant(&root, &Region::all(), Rights::Write, None, "writer")
            .expect("narrowing grant");
        let reader = authority
            .grant(&root, &Region::all(), Rights::Traverse, None, "reader")
            .expect("narrowing grant");
        let store_config = StoreConfig {
            segment_target_bytes: segment_bytes,
            ..Default::default()
        };
        let store = Arc::new(PackStore::in_memory(store_config.clone()));
        let lineage = Lineage::new(store.clone(), None);
        lineage
            .import(&observation_of(graph), 1, writer.id.0, RegionMap::PerNode)
            .expect("fresh lineage accepts a well-formed graph");
        Self {
            store,
            lineage,
            authority,
            writer,
            reader,
            leases: LeaseTable::new(),
            held: BTreeMap::new(),
            pinned: BTreeMap::new(),
            reads: BTreeMap::new(),
            tick: 1,
            store_config,
        }
    }

    pub fn head(&self) -> Snapshot {
        self.lineage.head()
    }

    pub fn lineage(&self) -> &Lineage {
        &self.lineage
    }

    fn objects_for(&self, op: &Op) -> Vec<u64> {
        let mut v = match op {
            Op::Insert { node, .. } => vec![*node],
            Op::Delete { node } => self.lineage.with_head_graph(|g| {
                g.touched_by(&Mutation::RemoveNode { id: NodeId(*node) })
                    .into_iter()
                    .map(|n| n.0)
                    .collect()
            }),
            Op::Merge { batch } => batch.iter().map(|(n, _)| *n).collect(),
            Op::Update(Update::AddEdge { src, dst } | Update::RemoveEdge { src, dst }) => vec![*src, *dst],
            Op::Update(Update::SetPayload { node, .. }) => vec![*node],
            _ => Vec::new(),
        };
        v.sort_unstable();
        v.dedup();
        v
    }

    fn observation_for(&self, op: &Op) -> Observation {
        let edge = |src: &u64, dst: &u64| Edge {
            src: NodeId(*src),
            dst: NodeId(*dst),
            etype: EdgeType::from(LINK),
        };
        let mutations = match op {
            Op::Insert { node, label, payload } => vec![Mutation::AddNode {
                id: NodeId(*node),
                label: Label(label.clone()),
                payload: payload.clone(),
            }],
            Op::Delete { node } => vec![Mutation::RemoveNode { id: NodeId(*node) }],
            Op::Merge { batch } => self.lineage.with_head_graph(|g| {
                batch
                    .iter()
                    .map(|(n, p)| {
                        if g.contains(NodeId(*n)) {
                            Mutation::SetPayload {
                                id: NodeId(*n),
                                payload: p.clone(),
                            }
                        } else {
                            Mutation::AddNode {
                                id: NodeId(*n),
                                label: Label::from("v"),
                                payload: p.clone(),
                            }
                        }
                    })
                    .collect()
            }),
            Op::Update(Update::AddEdge { src, dst }) => vec![Mutation::AddEdge(edge(src, dst))],
            Op::Update(Update::RemoveEdge { src, dst }) => vec![Mutation::RemoveEdge(edge(src, dst))],
            Op::Update(Update::SetPayload { node, payload }) => vec![Mutation::SetPayload {
                id: NodeId(*node),
                payload: payload.clone(),
            }],
            _ => Vec::new(),
        };
        Observation { mutations }
    }
}

impl World for LineageWorld {
    fn begin(&mut self, e: &Event) -> Result<(), EventError> {
        match &e.op {
            Op::Insert { .. } | Op::Delete { .. } | Op::Merge { .. } | Op::Update(_) => {
                let mut got = Vec::new();
                for o in self.objects_for(&e.op) {
                    match self.leases.acquire_write(ObjectId(o)) {
                        Ok(l) => got.push(l),
                        Err(err) => {
                            for l in got {
                                self.leases.release(l).expect("just acquired");
                            }
                            return Err(EventError::Lease(err.to_string()));
                        }
                    }
                }
                self.held.insert(e.id, got);
                Ok(())
            }
            Op::Traverse { .. } => {
                self.pinned.insert(e.id, self.lineage.head());
                Ok(())
            }
            Op::Compact { .. } => Ok(()),
            _ => Err(EventError::Unsupported(e.kind().as_str())),
        }
    }

    fn apply(&mut self, e: &Event) -> Result<(), EventError> {
        match &e.op {
            Op::Compact { k } => {
                self.lineage.compact_head(*k).map_err(EventError::rejected)?;
                Ok(())
            }
            Op::Traverse { start, hops } => {
                let snap = self.pinned.get(&e.id).ok_or(EventError::Rejected("traverse not begun".into()))?;
                let cache = ReadCache::new(64);
                let reader = SnapshotReader::new(&self.store, snap, &cache);
                let guard = TraversalGuard {
                    authority: &self.authority,
                    cap: &self.reader,
                    now: self.authority.now(),
                    verify: true,
                    degree_bound: DEFAULT_DEGREE_BOUND,
                };
                let got = traverse_khop(&reader, NodeId(*start), *hops, &guard).map_err(EventError::rejected)?;
                self.reads.insert(e.id, ids_bytes(got.into_iter().map(|n| n.0)));
                Ok(())
            }
            _ => {
                let held = self.held.get(&e.id).cloned().unwrap_or_default();
                let obs = self.observation_for(&e.op);
                let auth = WriteAuth {
                    authority: &self.authority,
                    cap: &self.writer,
                    leases: &self.leases,
                    held: &held,
                    regions: RegionMap::PerNode,
                };
                self.tick += 1;
                self.lineage
                    .commit(&obs, self.tick, &auth)
                    .map_err(EventError::rejected)?;
                Ok(())
            }
        }
    }

    fn end(&mut self, e: &Event) -> Result<(), EventError> {
        for l in self.held.remove(&e.id).unwrap_or_default() {
            self.leases.release(l).map_err(EventError::rejected)?;
        }
        self.pinned.remove(&e.id);
        Ok(())
    }

    fn observe(&self) -> Vec<u8> {
        let mut b = iv_bytes(&self.lineage.head().invariants());
        put_reads(&mut b, &self.reads);
        b
    }

    fn full_state(&self) -> Vec<u8> {
        let head = self.lineage.head();
        let mut b = b"LINW".to_vec();
        put_blob(&mut b, &head.canonical_bytes());
        put_u32(&mut b, head.segments.len() as u32);
        for s in &head.segments {
            put_u32(&mut b, s.0);
        }
        let contents = self.store.contents();
        put_u32(&mut b, contents.len() as u32);
        for (h, bytes) in contents {
            b.extend_from_slice(h.digest());
            put_blob(&mut b, &bytes);
        }
        put_reads(&mut b, &self.reads);
        b
    }

    fn fork(&self) -> Box<dyn World> {
        let store = Arc::new(self.store.fork());
        Box::new(LineageWorld {
            lineage: self.lineage.fork(store.clone()),
            store,
            authority: self.authority.clone(),
            writer: self.writer.clone(),
            reader: self.reader.clone(),
            leases: self.leases.fork(),
            held: self.held.clone(),
            pinned: self.pinned.clone(),
            reads: self.reads.clone(),
            tick: self.tick,
            store_config: self.store_config.clone(),
        })
    }

    fn gen_view(&self) -> GenView {
        self.lineage.with_head_graph(|g| GenView {
            nodes: g.node_ids().map(|n| n.0).collect(),
            edges: g.edges().map(|e| (e.src.0, e.dst.0)).collect(),
            ..Default::default()
        })
    }

    /// Restarts the lineage from the head's content. Scopes and regions are
    /// those of the single writer, so the invariant vector is unchanged.
    fn rebase(&mut self) {
        if !self.held.is_empty() || !self.pinned.is_empty() {
            return;
        }
        let graph = self.lineage.with_head_graph(|g| g.clone());
        let store = Arc::new(PackStore::in_memory(self.store_config.clone()));
        let lineage = Lineage::new(store.clone(), None);
        lineage
            .import(&observation_of(&graph), self.tick, self.writer.id.0, RegionMap::PerNode)
            .expect("head graph is well formed");
        self.store = store;
        self.lineage = lineage;
        self.reads.clear();
    }

    fn backend(&self) -> &'static str {
        "lineage"
    }
}

/// Content projection over the pack store.
pub struct CasWorld {
    store: PackStore,
    reads: BTreeMap<u64, Vec<u8>>,
}

impl CasWorld {
    pub fn new<'a, I: IntoIterator<Item = &'a [u8]>>(contents: I) -> Self {
        let store = PackStore::in_memory(StoreConfig {
            segment_target_bytes: 4096,
            ..Default::default()
        });
        for c in contents {
            store.put(c).expect("within size limit");
        }
        Self {
            store,
            reads: BTreeMap::new(),
        }
    }

    pub fn store(&self) -> &PackStore {
        &self.store
    }
}

impl World for CasWorld {
    fn begin(&mut self, e: &Event) -> Result<(), EventError> {
        match e.op {
            Op::Put { .. } | Op::Get { .. } => Ok(()),
            _ => Err(EventError::Unsupported(e.kind().as_str())),
        }
    }

    fn apply(&mut self, e: &Event) -> Result<(), EventError> {
        match &e.op {
            Op::Put { content } => {
                self.store.put(content).map_err(EventError::rejected)?;
            }
            Op::Get { hash } => {
                let bytes = self.store.get(hash).map_err(EventError::rejected)?;
                self.reads.insert(e.id, bytes);
            }
            _ => return Err(EventError::Unsupported(e.kind().as_str())),
        }
        Ok(())
    }

    fn end(&mut self, _: &Event) -> Result<(), EventError> {
        Ok(())
    }

    fn observe(&self) -> Vec<u8> {
        let hashes = self.store.hashes();
        let mut b = Vec::with_capacity(hashes.len() * 32 + 8);
        put_u32(&mut b, hashes.len() as u32);
        for h in hashes {
            b.extend_from_slice(h.digest());
        }
        put_reads(&mut b, &self.reads);
        b
    }

    fn full_state(&self) -> Vec<u8> {
        let mut b = b"CASW".to_vec();
        let ids = self.store.segment_ids();
        put_u32(&mut b, ids.len() as u32);
        for id in ids {
            put_blob(&mut b, &self.store.segment_bytes(id).expect("listed segment"));
        }
        put_reads(&mut b, &self.reads);
        b
    }

    fn fork(&self) -> Box<dyn World> {
        Box::new(CasWorld {
            store: self.store.fork(),
            reads: self.reads.clone(),
        })
    }

    fn gen_view(&self) -> GenView {
        GenView {
            contents: self.store.hashes(),
            ..Default::default()
        }
    }

    fn rebase(&mut self) {
        let contents = self.store.contents();
        *self = CasWorld::new(contents.iter().map(|(_, b)| b.as_slice()));
    }

    fn backend(&self) -> &'static str {
        "pack-store"
    }
}

/// Capability projection over the lattice authority.
pub struct CapWorld {
    auth: CapabilityAuthority,
}

impl CapWorld {
    pub fn new(auth: CapabilityAuthority) -> Self {
        Self { auth }
    }

    pub fn authority(&self) -> &CapabilityAuthority {
        &self.auth
    }
}

impl World for CapWorld {
    fn begin(&mut self, e: &Event) -> Result<(), EventError> {
        match e.op {
            Op::Grant { .. } | Op::Revoke { .. } => Ok(()),
            _ => Err(EventError::Unsupported(e.kind().as_str())),
        }
    }

    fn apply(&mut self, e: &Event) -> Result<(), EventError> {
        match &e.op {
            Op::Grant {
                parent,
                region,
                rights,
                subject,
            } => {
                let p = self
                    .auth
                    .get(*parent)
                    .ok_or_else(|| EventError::Capability(format!("unknown parent {parent}")))?;
                self.auth
                    .grant(&p, region, *rights, None, subject)
                    .map_err(|e| EventError::Capability(e.to_string()))?;
            }
            Op::Revoke { cap } => {
                self.auth.revoke(*cap).map_err(|e| EventError::Capability(e.to_string()))?;
            }
            _ => return Err(EventError::Unsupported(e.kind().as_str())),
        }
        Ok(())
    }

    fn end(&mut self, _: &Event) -> Result<(), EventError> {
        Ok(())
    }

    fn observe(&self) -> Vec<u8> {
        let mut b = Vec::new();
        let recs = self.auth.records();
        put_u32(&mut b, recs.len() as u32);
        for r in recs {
            put_u64(&mut b, r.id.0);
            put_u32(&mut b, r.spans.len() as u32);
            for (lo, hi) in &r.spans {
                put_u64(&mut b, *lo);
                put_u64(&mut b, *hi);
            }
            b.push(r.rights as u8);
            match r.expiry {
                Expiry::Never => b.push(0),
                Expiry::At(t) => {
                    b.push(1);
                    put_u64(&mut b, t);
                }
            }
            b.push(r.live as u8);
        }
        b
    }

    fn full_state(&self) -> Vec<u8> {
        let mut b = b"CAPW".to_vec();
        put_blob(&mut b, &self.observe());
        put_blob(&mut b, self.auth.audit_log().to_csv().as_bytes());
        b
    }

    fn fork(&self) -> Box<dyn World> {
        Box::new(CapWorld { auth: self.auth.fork() })
    }

    fn gen_view(&self) -> GenView {
        let caps = self
            .auth
            .all()
            .into_iter()
            .filter(|c| self.auth.is_revoked(c.id) == Some(false))
            .map(|c| {
                let root = c.proof.is_empty();
                (c.id, c.region, c.rights, root)
            })
            .collect();
        GenView {
            caps,
            ..Default::default()
        }
    }

    fn rebase(&mut self) {
        self.auth = self.auth.fork_without_audit();
    }

    fn backend(&self) -> &'static str {
        "lattice"
    }
}

/// Ownership projection: objects whose heads move only under write leases.
pub struct OwnWorld {
    leases: LeaseTable,
    store: PackStore,
    objects: u64,
    held: BTreeMap<u64, Lease>,
    reads: BTreeMap<u64, Vec<u8>>,
}

impl OwnWorld {
    /// `objects` objects, each given `initial(o)` by one exclusive write.
    pub fn new(objects: u64, mut initial: impl FnMut(u64) -> Vec<u8>) -> Self {
        let leases = LeaseTable::new();
        let store = PackStore::in_memory(StoreConfig {
            segment_target_bytes: 4096,
            ..Default::default()
        });
        for o in 0..objects {
            let l = leases.acquire_write(ObjectId(o)).expect("fresh object");
            leases.commit(&l, &initial(o), &store).expect("store open");
            leases.release(l).expect("live lease");
        }
        Self {
            leases,
            store,
            objects,
            held: BTreeMap::new(),
            reads: BTreeMap::new(),
        }
    }

    pub fn leases(&self) -> &LeaseTable {
        &self.leases
    }
}

impl World for OwnWorld {
    fn begin(&mut self, e: &Event) -> Result<(), EventError> {
        let lease: Lease = match e.op {
            Op::Own { object, .. } => self
                .leases
                .acquire_write(ObjectId(object))
                .map_err(|err| EventError::Lease(err.to_string()))?
                .into(),
            Op::Borrow { object } => self
                .leases
                .acquire_read(ObjectId(object))
                .map_err(|err| EventError::Lease(err.to_string()))?
                .into(),
            _ => return Err(EventError::Unsupported(e.kind().as_str())),
        };
        self.held.insert(e.id, lease);
        Ok(())
    }

    fn apply(&mut self, e: &Event) -> Result<(), EventError> {
        let lease = *self.held.get(&e.id).ok_or(EventError::Rejected("event not begun".into()))?;
        match (&e.op, lease) {
            (Op::Own { value, .. }, Lease::Write(w)) => {
                self.leases.commit(&w, value, &self.store).map_err(EventError::rejected)?;
            }
            (Op::Borrow { object }, Lease::Read(_)) => {
                let v = match self.leases.head(ObjectId(*object)) {
                    Some(h) => self.store.get(&h).map_err(EventError::rejected)?,
                    None => Vec::new(),
                };
                self.reads.insert(e.id, v);
            }
            _ => return Err(EventError::Rejected("lease kind does not match event".into())),
        }
        Ok(())
    }

    fn end(&mut self, e: &Event) -> Result<(), EventError> {
        if let Some(l) = self.held.remove(&e.id) {
            self.leases.release(l).map_err(EventError::rejected)?;
        }
        Ok(())
    }

    fn observe(&self) -> Vec<u8> {
        let mut b = Vec::new();
        put_u64(&mut b, self.objects);
        for o in 0..self.objects {
            let en = self.leases.entry(ObjectId(o));
            b.extend_from_slice(en.head.map_or([0u8; 32], |h| *h.digest()).as_slice());
            put_u64(&mut b, en.version);
            put_u64(&mut b, en.readers);
            b.push(en.writer as u8);
        }
        put_reads(&mut b, &self.reads);
        b
    }

    fn full_state(&self) -> Vec<u8> {
        let mut b = b"OWNW".to_vec();
        put_u64(&mut b, self.objects);
        for o in 0..self.objects {
            let en = self.leases.entry(ObjectId(o));
            b.extend_from_slice(en.head.map_or([0u8; 32], |h| *h.digest()).as_slice());
            put_u64(&mut b, en.version);
            put_u64(&mut b, en.readers);
            b.push(en.writer as u8);
            let tip = self.leases.chain_tip(ObjectId(o));
            b.extend_from_slice(tip.map_or([0u8; 32], |h| *h.digest()).as_slice());
            put_u64(&mut b, self.leases.head_swaps(ObjectId(o)));
        }
        let contents = self.store.contents();
        put_u32(&mut b, contents.len() as u32);
        for (h, bytes) in contents {
            b.extend_from_slice(h.digest());
            put_blob(&mut b, &bytes);
        }
        put_reads(&mut b, &self.reads);
        b
    }

    fn fork(&self) -> Box<dyn World> {
        Box::new(OwnWorld {
            leases: self.leases.fork(),
            store: self.store.fork(),
            objects: self.objects,
            held: self.held.clone(),
            reads: self.reads.clone(),
        })
    }

    fn gen_view(&self) -> GenView {
        GenView {
            objects: self.objects,
            ..Default::default()
        }
    }

    fn rebase(&mut self) {
        self.reads.clear();
    }

    fn backend(&self) -> &'static str {
        "leases"
    }
}

