//! Simplified single-component adapters. None of them hold leases or
//! snapshots; every event acts on live state when it is applied.

use std::collections::{BTreeMap, BTreeSet};

use crate::capability::{derive_id, CapId, Expiry, Region, Rights};
use crate::cas::ContentHash;
use crate::graph::{traverse_khop, Edge, EdgeType, GraphState, NodeId, TraversalGuard, DEFAULT_DEGREE_BOUND};

use super::engine::{ids_bytes, put_blob, put_reads, put_u32, put_u64};
use super::{Event, EventError, GenView, Op, Update, World};

const SLOTS: usize = 4;

type Slot = Option<(u64, Vec<u8>)>;

/// Slotted pages filled in arrival order; a node's location is part of the
/// stored state.
#[derive(Clone)]
pub struct PageStore {
    pages: Vec<[Slot; SLOTS]>,
    at: BTreeMap<u64, (usize, usize)>,
}

impl PageStore {
    pub fn new<I: IntoIterator<Item = (u64, Vec<u8>)>>(nodes: I) -> Self {
        let mut s = Self {
            pages: Vec::new(),
            at: BTreeMap::new(),
        };
        for (n, p) in nodes {
            s.insert(n, p).expect("distinct ids");
        }
        s
    }

    fn insert(&mut self, node: u64, payload: Vec<u8>) -> Result<(), EventError> {
        if self.at.contains_key(&node) {
            return Err(EventError::Rejected(format!("node {node} exists")));
        }
        let free = self
            .pages
            .iter()
            .enumerate()
            .find_map(|(p, page)| page.iter().position(Option::is_none).map(|s| (p, s)));
        let (p, s) = free.unwrap_or_else(|| {
            self.pages.push(Default::default());
            (self.pages.len() - 1, 0)
        });
        self.pages[p][s] = Some((node, payload));
        self.at.insert(node, (p, s));
        Ok(())
    }

    /// Fresh store loaded from the live nodes in id order, as a restore
    /// from a logical image would build it.
    pub fn reload(&self) -> PageStore {
        PageStore::new(self.at.iter().map(|(n, (p, s))| {
            let payload = self.pages[*p][*s].as_ref().expect("indexed slot").1.clone();
            (*n, payload)
        }))
    }

    fn delete(&mut self, node: u64) -> Result<(), EventError> {
        let (p, s) = self
            .at
            .remove(&node)
            .ok_or_else(|| EventError::Rejected(format!("node {node} absent")))?;
        self.pages[p][s] = None;
        Ok(())
    }
}

impl World for PageStore {
    fn begin(&mut self, e: &Event) -> Result<(), EventError> {
        match e.op {
            Op::Insert { .. } | Op::Delete { .. } => Ok(()),
            _ => Err(EventError::Unsupported(e.kind().as_str())),
        }
    }

    fn apply(&mut self, e: &Event) -> Result<(), EventError> {
        match &e.op {
            Op::Insert { node, payload, .. } => self.insert(*node, payload.clone()),
            Op::Delete { node } => self.delete(*node),
            _ => Err(EventError::Unsupported(e.kind().as_str())),
        }
    }

    fn end(&mut self, _: &Event) -> Result<(), EventError> {
        Ok(())
    }

    fn observe(&self) -> Vec<u8> {
        let mut b = Vec::new();
        put_u32(&mut b, self.pages.len() as u32);
        for page in &self.pages {
            for slot in page {
                match slot {
                    None => b.push(0),
                    Some((n, p)) => {
                        b.push(1);
                        put_u64(&mut b, *n);
                        put_blob(&mut b, p);
                    }
                }
            }
        }
        b
    }

    fn full_state(&self) -> Vec<u8> {
        let mut b = b"PAGE".to_vec();
        b.extend(self.observe());
        b
    }

    fn fork(&self) -> Box<dyn World> {
        Box::new(self.clone())
    }

    fn gen_view(&self) -> GenView {
        GenView {
            nodes: self.at.keys().copied().collect(),
            ..Default::default()
        }
    }

    fn backend(&self) -> &'static str {
        "page-store"
    }
}

/// Append-only log of payload segments in arrival order.
#[derive(Clone)]
pub struct MergeLog {
    segments: Vec<Vec<(u64, Vec<u8>)>>,
}

impl MergeLog {
    pub fn new(initial: Vec<(u64, Vec<u8>)>) -> Self {
        Self {
            segments: vec![initial],
        }
    }

    /// Node payloads after each segment, oldest first; the only version
    /// history the log keeps.
    pub fn versions(&self) -> Vec<BTreeMap<u64, Vec<u8>>> {
        let mut cur = BTreeMap::new();
        self.segments
            .iter()
            .map(|seg| {
                cur.extend(seg.iter().cloned());
                cur.clone()
            })
            .collect()
    }

    fn live(&self) -> BTreeMap<u64, &[u8]> {
        let mut m = BTreeMap::new();
        for seg in &self.segments {
            for (n, p) in seg {
                m.insert(*n, p.as_slice());
            }
        }
        m
    }
}

impl World for MergeLog {
    fn begin(&mut self, e: &Event) -> Result<(), EventError> {
        match e.op {
            Op::Merge { .. } | Op::Compact { .. } => Ok(()),
            _ => Err(EventError::Unsupported(e.kind().as_str())),
        }
    }

    fn apply(&mut self, e: &Event) -> Result<(), EventError> {
        match &e.op {
            Op::Merge { batch } => self.segments.push(batch.clone()),
            Op::Compact { k } => {
                if *k == 0 {
                    return Err(EventError::Rejected("k must be positive".into()));
                }
                if self.segments.len() > *k {
                    // fold the oldest segments into one, newest write winning
                    let cut = self.segments.len() - *k + 1;
                    let mut merged = BTreeMap::new();
                    for seg in self.segments.drain(..cut) {
                        merged.extend(seg);
                    }
                    self.segments.insert(0, merged.into_iter().collect());
                }
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
        put_u32(&mut b, self.segments.len() as u32);
        for seg in &self.segments {
            put_u32(&mut b, seg.len() as u32);
            for (n, p) in seg {
                put_u64(&mut b, *n);
                put_blob(&mut b, p);
            }
        }
        b
    }

    fn full_state(&self) -> Vec<u8> {
        let mut b = b"MLOG".to_vec();
        b.extend(self.observe());
        b
    }

    fn fork(&self) -> Box<dyn World> {
        Box::new(self.clone())
    }

    fn gen_view(&self) -> GenView {
        GenView {
            nodes: self.live().into_keys().collect(),
            ..Default::default()
        }
    }

    fn rebase(&mut self) {
        if self.segments.len() > 1 {
            let merged: Vec<_> = self.live().into_iter().map(|(n, p)| (n, p.to_vec())).collect();
            self.segments = vec![merged];
        }
    }

    fn backend(&self) -> &'static str {
        "merge-log"
    }
}

/// One mutable graph shared by readers and writers.
#[derive(Clone)]
pub struct SharedGraph {
    graph: GraphState,
    reads: BTreeMap<u64, Vec<u8>>,
}

impl SharedGraph {
    pub fn new(graph: GraphState) -> Self {
        Self {
            graph,
            reads: BTreeMap::new(),
        }
    }
}

impl World for SharedGraph {
    fn begin(&mut self, e: &Event) -> Result<(), EventError> {
        match e.op {
            Op::Traverse { .. } | Op::Update(_) => Ok(()),
            _ => Err(EventError::Unsupported(e.kind().as_str())),
        }
    }

    fn apply(&mut self, e: &Event) -> Result<(), EventError> {
        let link = || EdgeType::from("link");
        match &e.op {
            Op::Traverse { start, hops } => {
                let authority = crate::capability::CapabilityAuthority::new();
                let cap = authority.mint_root(Region::all(), Rights::Traverse, Expiry::Never, "any");
                let guard = TraversalGuard {
                    authority: &authority,
                    cap: &cap,
                    now: 0,
                    verify: false,
                    degree_bound: DEFAULT_DEGREE_BOUND,
                };
                let got = traverse_khop(&self.graph, NodeId(*start), *hops, &guard).map_err(EventError::rejected)?;
                self.reads.insert(e.id, ids_bytes(got.into_iter().map(|n| n.0)));
            }
            Op::Update(Update::AddEdge { src, dst }) => {
                self.graph
                    .insert_edge(NodeId(*src), NodeId(*dst), link())
                    .map_err(EventError::rejected)?;
            }
            Op::Update(Update::RemoveEdge { src, dst }) => {
                self.graph
                    .remove_edge(&Edge {
                        src: NodeId(*src),
                        dst: NodeId(*dst),
                        etype: link(),
                    })
                    .map_err(EventError::rejected)?;
            }
            Op::Update(Update::SetPayload { node, payload }) => {
                self.graph
                    .set_payload(NodeId(*node), payload.clone())
                    .map_err(EventError::rejected)?;
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
        put_u32(&mut b, self.graph.node_count() as u32);
        for (id, n) in self.graph.nodes() {
            put_u64(&mut b, id.0);
            put_blob(&mut b, n.label.0.as_bytes());
            put_blob(&mut b, &n.payload);
        }
        put_u32(&mut b, self.graph.edge_count() as u32);
        for e in self.graph.edges() {
            put_u64(&mut b, e.src.0);
            put_u64(&mut b, e.dst.0);
            put_blob(&mut b, e.etype.0.as_bytes());
        }
        put_reads(&mut b, &self.reads);
        b
    }

    fn full_state(&self) -> Vec<u8> {
        let mut b = b"SHGR".to_vec();
        b.extend(self.observe());
        b
    }

    fn fork(&self) -> Box<dyn World> {
        Box::new(self.clone())
    }

    fn gen_view(&self) -> GenView {
        GenView {
            nodes: self.graph.node_ids().map(|n| n.0).collect(),
            edges: self.graph.edges().map(|e| (e.src.0, e.dst.0)).collect(),
            ..Default::default()
        }
    }

    fn rebase(&mut self) {
        self.reads.clear();
    }

    fn backend(&self) -> &'static str {
        "shared-graph"
    }
}

/// Location-addressed blob log: every put appends, even duplicates, and a
/// get returns the first matching location.
#[derive(Clone)]
pub struct LocationStore {
    log: Vec<(ContentHash, Vec<u8>)>,
    reads: BTreeMap<u64, Vec<u8>>,
}

impl LocationStore {
    pub fn new<'a, I: IntoIterator<Item = &'a [u8]>>(contents: I) -> Self {
        Self {
            log: contents.into_iter().map(|c| (ContentHash::of(c), c.to_vec())).collect(),
            reads: BTreeMap::new(),
        }
    }
}

impl World for LocationStore {
    fn begin(&mut self, e: &Event) -> Result<(), EventError> {
        match e.op {
            Op::Put { .. } | Op::Get { .. } => Ok(()),
            _ => Err(EventError::Unsupported(e.kind().as_str())),
        }
    }

    fn apply(&mut self, e: &Event) -> Result<(), EventError> {
        match &e.op {
            Op::Put { content } => self.log.push((ContentHash::of(content), content.clone())),
            Op::Get { hash } => {
                let (loc, _) = self
                    .log
                    .iter()
                    .enumerate()
                    .find(|(_, (h, _))| h == hash)
                    .ok_or_else(|| EventError::Rejected(format!("{hash} not stored")))?;
                let mut r = Vec::new();
                put_u64(&mut r, loc as u64);
                r.extend_from_slice(&self.log[loc].1);
                self.reads.insert(e.id, r);
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
        put_u32(&mut b, self.log.len() as u32);
        for (h, c) in &self.log {
            b.extend_from_slice(h.digest());
            put_blob(&mut b, c);
        }
        put_reads(&mut b, &self.reads);
        b
    }

    fn full_state(&self) -> Vec<u8> {
        let mut b = b"LOCS".to_vec();
        b.extend(self.observe());
        b
    }

    fn fork(&self) -> Box<dyn World> {
        Box::new(self.clone())
    }

    fn gen_view(&self) -> GenView {
        let set: BTreeSet<ContentHash> = self.log.iter().map(|(h, _)| *h).collect();
        GenView {
            contents: set.into_iter().collect(),
            ..Default::default()
        }
    }

    fn rebase(&mut self) {
        let mut seen = BTreeSet::new();
        self.log.retain(|(h, _)| seen.insert(*h));
        self.reads.clear();
    }

    fn backend(&self) -> &'static str {
        "location-store"
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct AclEntry {
    parent: Option<CapId>,
    region: Region,
    rights: Rights,
}

/// Flat access-control list. Grants need a present parent entry but are
/// not narrowed, and revoking an entry leaves its delegates in place.
#[derive(Clone)]
pub struct Acl {
    entries: BTreeMap<CapId, AclEntry>,
}

impl Acl {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn add_root(&mut self, region: Region, rights: Rights, subject: &str) -> CapId {
        let id = derive_id(None, &region, rights, Expiry::Never, subject);
        self.entries.insert(
            id,
            AclEntry {
                parent: None,
                region,
                rights,
            },
        );
        id
    }

    pub fn grant(&mut self, parent: CapId, region: Region, rights: Rights, subject: &str) -> Result<CapId, EventError> {
        if !self.entries.contains_key(&parent) {
            return Err(EventError::Capability(format!("unknown entry {parent}")));
        }
        let id = derive_id(Some(parent), &region, rights, Expiry::Never, subject);
        self.entries.insert(
            id,
            AclEntry {
                parent: Some(parent),
                region,
                rights,
            },
        );
        Ok(id)
    }

    pub fn revoke(&mut self, cap: CapId) -> Result<(), EventError> {
        self.entries
            .remove(&cap)
            .map(|_| ())
            .ok_or_else(|| EventError::Capability(format!("unknown entry {cap}")))
    }
}

impl Default for Acl {
    fn default() -> Self {
        Self::new()
    }
}

impl World for Acl {
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
            } => self.grant(*parent, region.clone(), *rights, subject).map(|_| ()),
            Op::Revoke { cap } => self.revoke(*cap),
            _ => Err(EventError::Unsupported(e.kind().as_str())),
        }
    }

    fn end(&mut self, _: &Event) -> Result<(), EventError> {
        Ok(())
    }

    fn observe(&self) -> Vec<u8> {
        let mut b = Vec::new();
        put_u32(&mut b, self.entries.len() as u32);
        for (id, en) in &self.entries {
            put_u64(&mut b, id.0);
            put_u32(&mut b, en.region.spans().len() as u32);
            for (lo, hi) in en.region.spans() {
                put_u64(&mut b, *lo);
                put_u64(&mut b, *hi);
            }
            b.push(en.rights as u8);
        }
        b
    }

    fn full_state(&self) -> Vec<u8> {
        let mut b = b"ACLW".to_vec();
        b.extend(self.observe());
        b
    }

    fn fork(&self) -> Box<dyn World> {
        Box::new(self.clone())
    }

    fn gen_view(&self) -> GenView {
        GenView {
            caps: self
                .entries
                .iter()
                .map(|(id, en)| (*id, en.region.clone(), en.rights, en.parent.is_none()))
                .collect(),
            ..Default::default()
        }
    }

    fn backend(&self) -> &'static str {
        "acl"
    }
}

/// Shared objects written and read without any lease.
#[derive(Clone)]
pub struct Unguarded {
    values: Vec<(Vec<u8>, u64)>,
    reads: BTreeMap<u64, Vec<u8>>,
}

impl Unguarded {
    pub fn new(objects: u64, mut initial: impl FnMut(u64) -> Vec<u8>) -> Self {
        Self {
            values: (0..objects).map(|o| (initial(o), 1)).collect(),
            reads: BTreeMap::new(),
        }
    }

    fn slot(&mut self, object: u64) -> Result<&mut (Vec<u8>, u64), EventError> {
        self.values
            .get_mut(object as usize)
            .ok_or_else(|| EventError::Rejected(format!("object {object} absent")))
    }
}

impl World for Unguarded {
    fn begin(&mut self, e: &Event) -> Result<(), EventError> {
        match e.op {
            Op::Own { .. } | Op::Borrow { .. } => Ok(()),
            _ => Err(EventError::Unsupported(e.kind().as_str())),
        }
    }

    fn apply(&mut self, e: &Event) -> Result<(), EventError> {
        match &e.op {
            Op::Own { object, value } => {
                let s = self.slot(*object)?;
                s.0 = value.clone();
                s.1 += 1;
            }
            Op::Borrow { object } => {
                let v = self.slot(*object)?.0.clone();
                self.reads.insert(e.id, v);
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
        put_u64(&mut b, self.values.len() as u64);
        for (v, ver) in &self.values {
            put_blob(&mut b, v);
            put_u64(&mut b, *ver);
        }
        put_reads(&mut b, &self.reads);
        b
    }

    fn full_state(&self) -> Vec<u8> {
        let mut b = b"UNGD".to_vec();
        b.extend(self.observe());
        b
    }

    fn fork(&self) -> Box<dyn World> {
        Box::new(self.clone())
    }

    fn gen_view(&self) -> GenView {
        GenView {
            objects: self.values.len() as u64,
            ..Default::default()
        }
    }

    fn rebase(&mut self) {
        self.reads.clear();
    }

    fn backend(&self) -> &'static str {
        "unguarded"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn page_slots_reused_in_order() {
        let mut p = PageStore::new((0..5).map(|i| (i, vec![i as u8])));
        assert_eq!(p.pages.len(), 2);
        p.delete(1).unwrap();
        p.insert(9, vec![9]).unwrap();
        assert_eq!(p.at[&9], (0, 1));
        assert!(p.insert(9, vec![]).is_err());
        assert!(p.delete(1).is_err());
    }

    #[test]
    fn merge_log_compaction_keeps_latest() {
        let mut m = MergeLog::new(vec![(1, vec![1]), (2, vec![2])]);
        for (i, b) in [vec![(1u64, vec![7u8])], vec![(3, vec![3])], vec![(2, vec![8])]].into_iter().enumerate() {
            m.apply(&Event {
                id: i as u64,
                op: Op::Merge { batch: b },
            })
            .unwrap();
        }
        let before: Vec<(u64, Vec<u8>)> = m.live().into_iter().map(|(n, p)| (n, p.to_vec())).collect();
        m.apply(&Event {
            id: 9,
            op: Op::Compact { k: 2 },
        })
        .unwrap();
        assert_eq!(m.segments.len(), 2);
        let after: Vec<(u64, Vec<u8>)> = m.live().into_iter().map(|(n, p)| (n, p.to_vec())).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn acl_revoke_does_not_cascade() {
        let mut a = Acl::new();
        let root = a.add_root(Region::all(), Rights::Admin, "r");
        let c = a.grant(root, Region::interval(0, 10), Rights::Write, "c").unwrap();
        let d = a.grant(c, Region::all(), Rights::Admin, "d").unwrap();
        a.revoke(c).unwrap();
        assert!(a.entries.contains_key(&d));
        assert!(a.grant(c, Region::all(), Rights::Read, "e").is_err());
    }
}
