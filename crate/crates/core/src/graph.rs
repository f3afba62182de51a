//! Labeled directed graphs, schema conformance, capability-gated k-hop
//! traversal and composable traversal queries.
//!
//! A [`GraphState`] is plain data. Mutations are expressed as
//! [`Mutation`]s collected into an [`Observation`]; a [`Stage`] checks each
//! one against the schema, the caller's capability and its write leases
//! before recording it.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use thiserror::Error;

use crate::capability::{Capability, CapabilityAuthority, Region, RejectReason, Rights, Verdict};
use crate::ownership::{LeaseTable, ObjectId, WriteLease};

pub const DEFAULT_DEGREE_BOUND: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Label(pub String);

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeType(pub String);

impl From<&str> for Label {
    fn from(s: &str) -> Self {
        Label(s.to_string())
    }
}

impl From<&str> for EdgeType {
    fn from(s: &str) -> Self {
        EdgeType(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub src: NodeId,
    pub dst: NodeId,
    pub etype: EdgeType,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Node {
    pub label: Label,
    pub payload: Vec<u8>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} already exists")]
    DuplicateNode(NodeId),
    #[error("unknown edge {0:?}")]
    UnknownEdge(Edge),
    #[error("edge ({0:?}, {1:?}, {2:?}) violates the schema")]
    SchemaViolation(Label, EdgeType, Label),
    #[error("capability rejected: {0:?}")]
    CapabilityRejected(RejectReason),
    #[error("no live write lease on {0:?}")]
    LeaseRequired(ObjectId),
    #[error("node {node} has out-degree {degree} above the bound {bound}")]
    DegreeBound { node: NodeId, degree: usize, bound: usize },
    #[error("query output type does not match the next query's input")]
    TypeMismatch,
    #[error("line {0}: {1}")]
    Parse(usize, String),
}

/// Observable graph state: nodes with labels, typed directed edges.
#[derive(Debug, Clone, Default)]
pub struct GraphState {
    nodes: BTreeMap<NodeId, Node>,
    out: BTreeMap<NodeId, BTreeSet<(NodeId, EdgeType)>>,
    inc: BTreeMap<NodeId, BTreeSet<(NodeId, EdgeType)>>,
}

impl PartialEq for GraphState {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.out == other.out
    }
}

impl Eq for GraphState {}

impl GraphState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.out.values().map(|s| s.len()).sum()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(&id)
    }

    pub fn label(&self, id: NodeId) -> Option<&Label> {
        self.nodes.get(&id).map(|n| &n.label)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &Node)> {
        self.nodes.iter().map(|(k, v)| (*k, v))
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.keys().copied()
    }

    pub fn next_id(&self) -> NodeId {
        NodeId(self.nodes.keys().next_back().map_or(0, |n| n.0 + 1))
    }

    /// Out-edges of `id`, sorted by (dst, type).
    pub fn out_edges(&self, id: NodeId) -> impl Iterator<Item = &(NodeId, EdgeType)> {
        self.out.get(&id).into_iter().flatten()
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        self.out.iter().flat_map(|(src, set)| {
            set.iter().map(move |(dst, t)| Edge {
                src: *src,
                dst: *dst,
                etype: t.clone(),
            })
        })
    }

    pub fn edge_set(&self) -> BTreeSet<Edge> {
        self.edges().collect()
    }

    pub fn max_out_degree(&self) -> usize {
        self.out.values().map(|s| s.len()).max().unwrap_or(0)
    }

    pub fn insert_node(&mut self, id: NodeId, label: Label, payload: Vec<u8>) -> Result<(), GraphError> {
        if self.nodes.contains_key(&id) {
            return Err(GraphError::DuplicateNode(id));
        }
        self.nodes.insert(id, Node { label, payload });
        Ok(())
    }

    pub fn remove_node(&mut self, id: NodeId) -> Result<Node, GraphError> {
        let node = self.nodes.remove(&id).ok_or(GraphError::UnknownNode(id))?;
        for (dst, t) in self.out.remove(&id).unwrap_or_default() {
            if let Some(s) = self.inc.get_mut(&dst) {
                s.remove(&(id, t));
            }
        }
        for (src, t) in self.inc.remove(&id).unwrap_or_default() {
            if let Some(s) = self.out.get_mut(&src) {
                s.remove(&(id, t));
                if s.is_empty() {
                    self.out.remove(&src);
                }
            }
        }
        Ok(node)
    }

    pub fn insert_edge(&mut self, src: NodeId, dst: NodeId, etype: EdgeType) -> Result<bool, GraphError> {
        for n in [src, dst] {
            if !self.nodes.contains_key(&n) {
                return Err(GraphError::UnknownNode(n));
            }
        }
        self.inc.entry(dst).or_default().insert((src, etype.clone()));
        Ok(self.out.entry(src).or_default().insert((dst, etype)))
    }

    pub fn remove_edge(&mut self, edge: &Edge) -> Result<(), GraphError> {
        let key = (edge.dst, edge.etype.clone());
        let removed = self.out.get_mut(&edge.src).is_some_and(|s| s.remove(&key));
        if !removed {
            return Err(GraphError::UnknownEdge(edge.clone()));
        }
        if self.out.get(&edge.src).is_some_and(|s| s.is_empty()) {
            self.out.remove(&edge.src);
        }
        if let Some(s) = self.inc.get_mut(&edge.dst) {
            s.remove(&(edge.src, edge.etype.clone()));
        }
        Ok(())
    }

    pub fn set_payload(&mut self, id: NodeId, payload: Vec<u8>) -> Result<(), GraphError> {
        self.nodes
            .get_mut(&id)
            .map(|n| n.payload = payload)
            .ok_or(GraphError::UnknownNode(id))
    }

    pub fn apply(&mut self, m: &Mutation) -> Result<(), GraphError> {
        match m {
            Mutation::AddNode { id, label, payload } => self.insert_node(*id, label.clone(), payload.clone()),
            Mutation::RemoveNode { id } => self.remove_node(*id).map(|_| ()),
            Mutation::AddEdge(e) => self.insert_edge(e.src, e.dst, e.etype.clone()).map(|_| ()),
            Mutation::RemoveEdge(e) => self.remove_edge(e),
            Mutation::SetPayload { id, payload } => self.set_payload(*id, payload.clone()),
        }
    }

    /// Nodes inside `region` and the edges with both endpoints inside.
    pub fn restrict(&self, region: &Region) -> GraphState {
        let mut g = GraphState::new();
        for (id, n) in &self.nodes {
            if region.contains(id.0) {
                g.nodes.insert(*id, n.clone());
            }
        }
        for e in self.edges() {
            if region.contains(e.src.0) && region.contains(e.dst.0) {
                g.insert_edge(e.src, e.dst, e.etype).expect("endpoints kept");
            }
        }
        g
    }

    /// Nodes whose out-edges or own data a mutation would change.
    pub fn touched_by(&self, m: &Mutation) -> Vec<NodeId> {
        match m {
            Mutation::AddNode { id, .. } | Mutation::SetPayload { id, .. } => vec![*id],
            Mutation::RemoveNode { id } => {
                let mut v = vec![*id];
                v.extend(self.inc.get(id).into_iter().flatten().map(|(s, _)| *s));
                v.sort();
                v.dedup();
                v
            }
            Mutation::AddEdge(e) | Mutation::RemoveEdge(e) => vec![e.src],
        }
    }

    /// Edge-list export: `src dst edge_type` lines and `node label` lines.
    pub fn to_edge_list(&self) -> (String, String) {
        let mut edges = String::new();
        for e in self.edges() {
            edges.push_str(&format!("{} {} {}\n", e.src, e.dst, e.etype.0));
        }
        let mut labels = String::new();
        for (id, n) in &self.nodes {
            labels.push_str(&format!("{} {}\n", id, n.label.0));
        }
        (edges, labels)
    }

    pub fn from_edge_list(edges: &str, labels: &str) -> Result<GraphState, GraphError> {
        let mut g = GraphState::new();
        for (i, line) in labels.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split_whitespace();
            let (Some(id), Some(label), None) = (it.next(), it.next(), it.next()) else {
                return Err(GraphError::Parse(i + 1, "expected `node label`".into()));
            };
            let id = id
                .parse()
                .map_err(|_| GraphError::Parse(i + 1, format!("bad node id {id:?}")))?;
            g.insert_node(NodeId(id), Label(label.into()), Vec::new())?;
        }
        for (i, line) in edges.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<_> = line.split_whitespace().collect();
            let [src, dst, t] = parts[..] else {
                return Err(GraphError::Parse(i + 1, "expected `src dst edge_type`".into()));
            };
            let parse = |s: &str| {
                s.parse::<u64>()
                    .map(NodeId)
                    .map_err(|_| GraphError::Parse(i + 1, format!("bad node id {s:?}")))
            };
            g.insert_edge(parse(src)?, parse(dst)?, EdgeType(t.into()))?;
        }
        Ok(g)
    }
}

/// Allowed `(src label, edge type, dst label)` triples.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelSchema {
    allowed: BTreeSet<(Label, EdgeType, Label)>,
}

impl LabelSchema {
    pub fn new<I: IntoIterator<Item = (Label, EdgeType, Label)>>(triples: I) -> Self {
        Self {
            allowed: triples.into_iter().collect(),
        }
    }

    pub fn allows(&self, src: &Label, etype: &EdgeType, dst: &Label) -> bool {
        self.allowed.contains(&(src.clone(), etype.clone(), dst.clone()))
    }

    pub fn check_edge(&self, g: &GraphState, src: NodeId, dst: NodeId, etype: &EdgeType) -> Result<(), GraphError> {
        let sl = g.label(src).ok_or(GraphError::UnknownNode(src))?;
        let dl = g.label(dst).ok_or(GraphError::UnknownNode(dst))?;
        if self.allows(sl, etype, dl) {
            Ok(())
        } else {
            Err(GraphError::SchemaViolation(sl.clone(), etype.clone(), dl.clone()))
        }
    }

    /// Edges of `g` that no triple allows.
    pub fn violations(&self, g: &GraphState) -> Vec<Edge> {
        g.edges()
            .filter(|e| self.check_edge(g, e.src, e.dst, &e.etype).is_err())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Mutation {
    AddNode { id: NodeId, label: Label, payload: Vec<u8> },
    RemoveNode { id: NodeId },
    AddEdge(Edge),
    RemoveEdge(Edge),
    SetPayload { id: NodeId, payload: Vec<u8> },
}

/// An ordered batch of mutations staged against a parent snapshot.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Observation {
    pub mutations: Vec<Mutation>,
}

impl Observation {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.mutations.is_empty()
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &Observation) -> Observation {
        Observation {
            mutations: self.mutations.iter().chain(&next.mutations).cloned().collect(),
        }
    }

    pub fn push(&mut self, m: Mutation) {
        self.mutations.push(m);
    }

    pub fn apply_to(&self, g: &mut GraphState) -> Result<(), GraphError> {
        self.mutations.iter().try_for_each(|m| g.apply(m))
    }
}

/// Maps node ids to the ownership object whose write lease guards them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionMap {
    /// The whole graph is one owned object.
    Single(ObjectId),
    /// Every node is its own owned object.
    PerNode,
}

impl RegionMap {
    pub fn region_of(&self, node: NodeId) -> ObjectId {
        match self {
            RegionMap::Single(o) => *o,
            RegionMap::PerNode => ObjectId(node.0),
        }
    }
}

/// What a writer presents to mutate the graph: a capability plus the write
/// leases it holds.
#[derive(Debug, Clone, Copy)]
pub struct WriteAuth<'a> {
    pub authority: &'a CapabilityAuthority,
    pub cap: &'a Capability,
    pub leases: &'a LeaseTable,
    pub held: &'a [WriteLease],
    pub regions: RegionMap,
}

impl WriteAuth<'_> {
    /// Checks write rights over `nodes` and a live lease on each node's region.
    pub fn check(&self, nodes: &[NodeId]) -> Result<(), GraphError> {
        let region = Region::from_points(nodes.iter().map(|n| n.0));
        match self
            .authority
            .verify(self.cap, &region, Rights::Write, self.authority.now())
        {
            Verdict::Accept => {}
            Verdict::Reject(r) => return Err(GraphError::CapabilityRejected(r)),
        }
        for n in nodes {
            let obj = self.regions.region_of(*n);
            let ok = self
                .held
                .iter()
                .any(|l| l.object == obj && self.leases.holds_write(l));
            if !ok {
                return Err(GraphError::LeaseRequired(obj));
            }
        }
        Ok(())
    }

    /// Checks every mutation of `obs` in order against `base`.
    pub fn check_observation(&self, base: &GraphState, obs: &Observation) -> Result<(), GraphError> {
        let mut g = base.clone();
        for m in &obs.mutations {
            let mut nodes = g.touched_by(m);
            if let Mutation::AddEdge(e) = m {
                nodes.push(e.dst);
            }
            self.check(&nodes)?;
            g.apply(m)?;
        }
        Ok(())
    }
}

/// A working copy of a graph that records checked mutations.
pub struct Stage<'a> {
    graph: GraphState,
    obs: Observation,
    schema: Option<&'a LabelSchema>,
    auth: WriteAuth<'a>,
}

impl<'a> Stage<'a> {
    pub fn new(base: GraphState, schema: Option<&'a LabelSchema>, auth: WriteAuth<'a>) -> Self {
        Self {
            graph: base,
            obs: Observation::new(),
            schema,
            auth,
        }
    }

    pub fn graph(&self) -> &GraphState {
        &self.graph
    }

    fn record(&mut self, m: Mutation) -> Result<(), GraphError> {
        self.graph.apply(&m)?;
        self.obs.push(m);
        Ok(())
    }

    pub fn add_node(&mut self, label: Label) -> Result<NodeId, GraphError> {
        let id = self.graph.next_id();
        self.insert_node(id, label, Vec::new())?;
        Ok(id)
    }

    pub fn insert_node(&mut self, id: NodeId, label: Label, payload: Vec<u8>) -> Result<(), GraphError> {
        self.auth.check(&[id])?;
        self.record(Mutation::AddNode { id, label, payload })
    }

    pub fn add_edge(&mut self, src: NodeId, dst: NodeId, etype: EdgeType) -> Result<Edge, GraphError> {
        for n in [src, dst] {
            if !self.graph.contains(n) {
                return Err(GraphError::UnknownNode(n));
            }
        }
        if let Some(schema) = self.schema {
            schema.check_edge(&self.graph, src, dst, &etype)?;
        }
        self.auth.check(&[src, dst])?;
        let edge = Edge { src, dst, etype };
        self.record(Mutation::AddEdge(edge.clone()))?;
        Ok(edge)
    }

    pub fn remove_node(&mut self, id: NodeId) -> Result<(), GraphError> {
        if !self.graph.contains(id) {
            return Err(GraphError::UnknownNode(id));
        }
        let touched = self.graph.touched_by(&Mutation::RemoveNode { id });
        self.auth.check(&touched)?;
        self.record(Mutation::RemoveNode { id })
    }

    pub fn remove_edge(&mut self, edge: Edge) -> Result<(), GraphError> {
        self.auth.check(&[edge.src, edge.dst])?;
        self.record(Mutation::RemoveEdge(edge))
    }

    pub fn set_payload(&mut self, id: NodeId, payload: Vec<u8>) -> Result<(), GraphError> {
        if !self.graph.contains(id) {
            return Err(GraphError::UnknownNode(id));
        }
        self.auth.check(&[id])?;
        self.record(Mutation::SetPayload { id, payload })
    }

    pub fn into_observation(self) -> Observation {
        self.obs
    }
}

/// Read access to adjacency, implemented by in-memory graphs and by
/// snapshot read paths.
pub trait Adjacency {
    fn has_node(&self, id: NodeId) -> bool;
    /// Out-neighbors of `id` in ascending id order.
    fn neighbors(&self, id: NodeId) -> Result<Vec<NodeId>, GraphError>;
}

impl Adjacency for GraphState {
    fn has_node(&self, id: NodeId) -> bool {
        self.contains(id)
    }

    fn neighbors(&self, id: NodeId) -> Result<Vec<NodeId>, GraphError> {
        if !self.contains(id) {
            return Err(GraphError::UnknownNode(id));
        }
        let mut v: Vec<_> = self.out_edges(id).map(|(d, _)| *d).collect();
        v.dedup();
        Ok(v)
    }
}

/// Traversal parameters besides the graph itself.
#[derive(Debug, Clone, Copy)]
pub struct TraversalGuard<'a> {
    pub authority: &'a CapabilityAuthority,
    pub cap: &'a Capability,
    pub now: u64,
    /// Skip capability checks entirely (overhead baseline).
    pub verify: bool,
    pub degree_bound: usize,
}

/// Nodes reachable from `start` in at most `k` hops without leaving the
/// capability's region.
pub fn traverse_khop<G: Adjacency + ?Sized>(
    graph: &G,
    start: NodeId,
    k: u32,
    guard: &TraversalGuard<'_>,
) -> Result<BTreeSet<NodeId>, GraphError> {
    if guard.verify {
        if let Verdict::Reject(r) = guard
            .authority
            .verify(guard.cap, &Region::point(start.0), Rights::Traverse, guard.now)
        {
            return Err(GraphError::CapabilityRejected(r));
        }
    }
    if !graph.has_node(start) {
        return Err(GraphError::UnknownNode(start));
    }
    let region = &guard.cap.region;
    let mut seen = BTreeSet::from([start]);
    let mut frontier = VecDeque::from([(start, 0u32)]);
    while let Some((n, d)) = frontier.pop_front() {
        if d == k {
            continue;
        }
        let next = graph.neighbors(n)?;
        if next.len() > guard.degree_bound {
            return Err(GraphError::DegreeBound {
                node: n,
                degree: next.len(),
                bound: guard.degree_bound,
            });
        }
        for m in next {
            if guard.verify && !region.contains(m.0) {
                continue;
            }
            if seen.insert(m) {
                frontier.push_back((m, d + 1));
            }
        }
    }
    Ok(seen)
}

/// BFS order listing of [`traverse_khop`]: by hop distance, then ascending id.
pub fn traverse_khop_ordered<G: Adjacency + ?Sized>(
    graph: &G,
    start: NodeId,
    k: u32,
    guard: &TraversalGuard<'_>,
) -> Result<Vec<(NodeId, u32)>, GraphError> {
    let reach = traverse_khop(graph, start, k, guard)?;
    let mut dist = BTreeMap::from([(start, 0u32)]);
    let mut layer = vec![start];
    let mut out = vec![(start, 0)];
    for d in 1..=k {
        let mut next = BTreeSet::new();
        for n in &layer {
            for m in graph.neighbors(*n)? {
                if reach.contains(&m) && !dist.contains_key(&m) {
                    next.insert(m);
                }
            }
        }
        for m in &next {
            dist.insert(*m, d);
            out.push((*m, d));
        }
        layer = next.into_iter().collect();
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryType {
    Nodes,
    Labels,
}

/// Read-only traversal queries over node sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Query {
    Identity,
    KHop(u32),
    HasLabel(Label),
    /// Terminal projection to the set of labels.
    Labels,
    /// Evaluate the first, then the second on each of its outputs.
    Then(Box<Query>, Box<Query>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QueryOutput {
    Nodes(BTreeSet<NodeId>),
    Labels(BTreeSet<Label>),
}

impl Query {
    pub fn input_type(&self) -> QueryType {
        QueryType::Nodes
    }

    pub fn output_type(&self) -> QueryType {
        match self {
            Query::Labels => QueryType::Labels,
            Query::Then(_, b) => b.output_type(),
            _ => QueryType::Nodes,
        }
    }

    pub fn eval(
        &self,
        g: &GraphState,
        input: &BTreeSet<NodeId>,
        guard: &TraversalGuard<'_>,
    ) -> Result<QueryOutput, GraphError> {
        match self {
            Query::Identity => Ok(QueryOutput::Nodes(input.clone())),
            Query::KHop(k) => {
                let mut out = BTreeSet::new();
                for n in input {
                    out.extend(traverse_khop(g, *n, *k, guard)?);
                }
                Ok(QueryOutput::Nodes(out))
            }
            Query::HasLabel(l) => Ok(QueryOutput::Nodes(
                input.iter().copied().filter(|n| g.label(*n) == Some(l)).collect(),
            )),
            Query::Labels => Ok(QueryOutput::Labels(
                input.iter().filter_map(|n| g.label(*n).cloned()).collect(),
            )),
            Query::Then(a, b) => match a.eval(g, input, guard)? {
                QueryOutput::Nodes(mid) => {
                    let mut nodes = BTreeSet::new();
                    let mut labels = BTreeSet::new();
                    for n in mid {
                        match b.eval(g, &BTreeSet::from([n]), guard)? {
                            QueryOutput::Nodes(s) => nodes.extend(s),
                            QueryOutput::Labels(s) => labels.extend(s),
                        }
                    }
                    Ok(match b.output_type() {
                        QueryType::Nodes => QueryOutput::Nodes(nodes),
                        QueryType::Labels => QueryOutput::Labels(labels),
                    })
                }
                QueryOutput::Labels(_) => Err(GraphError::TypeMismatch),
            },
        }
    }
}

/// `second` applied to each output of `first`, deduplicated.
pub fn query_compose(first: Query, second: Query) -> Result<Query, GraphError> {
    if first.output_type() != second.input_type() {
        return Err(GraphError::TypeMismatch);
    }
    Ok(Query::Then(Box::new(first), Box::new(second)))
}
