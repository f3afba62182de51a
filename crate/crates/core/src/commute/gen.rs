//! Initial states and random event pairs for each projection.

use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;

use crate::capability::{CapabilityAuthority, Expiry, Region, Rights};
use crate::workload::{gen_ba, zipf, zipf_rank, Orientation};

use super::baseline::{Acl, LocationStore, MergeLog, PageStore, SharedGraph, Unguarded};
use super::engine::{CapWorld, CasWorld, LineageWorld, OwnWorld};
use super::{Event, GenView, Op, Projection, Update, World};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenParams {
    /// Nodes in the initial preferential-attachment graph.
    pub nodes: u64,
    /// Attachment degree of that graph.
    pub ba_m: u64,
    pub payload_len: usize,
    /// Node-count band the order projection is kept within.
    pub min_nodes: usize,
    pub max_nodes: usize,
    /// Initially stored contents.
    pub contents: u64,
    /// Probability that a put repeats already stored content.
    pub dup_prob: f64,
    /// Delegations under the root capability at start.
    pub grants: usize,
    /// Fewer live delegated capabilities than this restarts the world.
    pub min_live_caps: usize,
    pub objects: u64,
    /// Zipf exponent for picking nodes and objects.
    pub alpha: f64,
    /// Pack segment target for lineage-backed worlds.
    pub segment_bytes: u64,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            nodes: 32,
            ba_m: 2,
            payload_len: 8,
            min_nodes: 8,
            max_nodes: 64,
            contents: 16,
            dup_prob: 0.5,
            grants: 15,
            min_live_caps: 4,
            objects: 8,
            alpha: 0.8,
            segment_bytes: 1024,
        }
    }
}

/// Ids handed to capability subjects stay below this bound.
const CAP_SPACE: u64 = 256;

fn payload(rng: &mut ChaCha8Rng, len: usize) -> Vec<u8> {
    let mut v = vec![0u8; len];
    rng.fill_bytes(&mut v);
    v
}

/// Deterministic content for index `i`.
pub fn content_of(i: u64) -> Vec<u8> {
    format!("content-{i:08}").into_bytes()
}

fn pick_zipf<T: Copy>(items: &[T], alpha: f64, rng: &mut ChaCha8Rng) -> T {
    let d = zipf(alpha, items.len() as u64).expect("non-empty");
    items[(zipf_rank(&d, rng) - 1) as usize]
}

fn fresh_node(view: &GenView, rng: &mut ChaCha8Rng) -> u64 {
    view.nodes.iter().max().map_or(0, |m| m + 1) + rng.random_range(0..4)
}

/// Starting world for projection `p`; `baseline` selects the simplified
/// adapter over the engine.
pub fn initial_world(p: Projection, baseline: bool, params: &GenParams, rng: &mut ChaCha8Rng) -> Box<dyn World> {
    match p {
        Projection::Order | Projection::History | Projection::Adjacency => {
            let ba = gen_ba(params.nodes, params.ba_m, rng.next_u64()).expect("valid graph parameters");
            let payloads: Vec<Vec<u8>> = (0..params.nodes).map(|_| payload(rng, params.payload_len)).collect();
            let graph = ba.to_graph(Orientation::NewToOld, |i| payloads[i as usize].clone());
            if !baseline {
                return Box::new(LineageWorld::new(&graph, params.segment_bytes));
            }
            let nodes = payloads.into_iter().enumerate().map(|(i, p)| (i as u64, p));
            match p {
                Projection::Order => Box::new(PageStore::new(nodes)),
                Projection::History => Box::new(MergeLog::new(nodes.collect())),
                _ => Box::new(SharedGraph::new(graph)),
            }
        }
        Projection::Content => {
            let contents: Vec<Vec<u8>> = (0..params.contents).map(content_of).collect();
            let it = contents.iter().map(Vec::as_slice);
            if baseline {
                Box::new(LocationStore::new(it))
            } else {
                Box::new(CasWorld::new(it))
            }
        }
        Projection::Capability => {
            // the same delegation tree for either backend
            let mut tree: Vec<(Region, Rights)> = vec![(Region::all(), Rights::Admin)];
            let mut plan = Vec::new();
            for i in 0..params.grants {
                let parent = rng.random_range(0..tree.len());
                let (region, rights) = narrower(&tree[parent].0, tree[parent].1, rng);
                plan.push((parent, region.clone(), rights, format!("init{i}")));
                tree.push((region, rights));
            }
            if baseline {
                let mut acl = Acl::new();
                let mut ids = vec![acl.add_root(Region::all(), Rights::Admin, "root")];
                for (parent, region, rights, subject) in plan {
                    ids.push(acl.grant(ids[parent], region, rights, &subject).expect("parent present"));
                }
                Box::new(acl)
            } else {
                let auth = CapabilityAuthority::new();
                let mut caps = vec![auth.mint_root(Region::all(), Rights::Admin, Expiry::Never, "root")];
                for (parent, region, rights, subject) in plan {
                    let c = auth
                        .grant(&caps[parent], &region, rights, None, &subject)
                        .expect("narrowing grant");
                    caps.push(c);
                }
                Box::new(CapWorld::new(auth))
            }
        }
        Projection::Ownership => {
            let init = |o: u64| o.to_be_bytes().to_vec();
            if baseline {
                Box::new(Unguarded::new(params.objects, init))
            } else {
                Box::new(OwnWorld::new(params.objects, init))
            }
        }
    }
}

/// A sub-interval of the first span of `region` and rights no higher than
/// `rights`.
fn narrower(region: &Region, rights: Rights, rng: &mut ChaCha8Rng) -> (Region, Rights) {
    let (lo, hi) = region.spans().first().copied().unwrap_or((0, 0));
    let hi = hi.min(CAP_SPACE);
    if lo >= hi {
        return (Region::empty(), Rights::None);
    }
    let a = rng.random_range(lo..hi);
    let b = rng.random_range(a + 1..=hi);
    let r = Rights::from_u8(rng.random_range(0..=rights as u8)).expect("in range");
    (Region::interval(a, b), r)
}

/// True when `view` no longer supports meaningful pairs for `p`.
pub(crate) fn exhausted(p: Projection, view: &GenView, params: &GenParams) -> bool {
    match p {
        Projection::Order | Projection::History | Projection::Adjacency => view.nodes.len() < 2,
        Projection::Content => view.contents.is_empty(),
        Projection::Capability => view.caps.iter().filter(|c| !c.3).count() < params.min_live_caps,
        Projection::Ownership => view.objects == 0,
    }
}

/// Draws one event of projection `p` applicable to the state behind `view`.
pub fn generate_event(p: Projection, view: &GenView, params: &GenParams, rng: &mut ChaCha8Rng, id: u64) -> Event {
    let alpha = params.alpha;
    let op = match p {
        Projection::Order => {
            let n = view.nodes.len();
            let insert = if n < params.min_nodes {
                true
            } else if n >= params.max_nodes {
                false
            } else {
                rng.random_bool(0.5)
            };
            if insert {
                Op::Insert {
                    node: fresh_node(view, rng),
                    label: "v".into(),
                    payload: payload(rng, params.payload_len),
                }
            } else {
                Op::Delete {
                    node: pick_zipf(&view.nodes, alpha, rng),
                }
            }
        }
        Projection::History => {
            if rng.random_bool(0.7) {
                let len = rng.random_range(1..=3);
                let batch = (0..len)
                    .map(|_| {
                        let node = if rng.random_bool(0.2) {
                            fresh_node(view, rng)
                        } else {
                            pick_zipf(&view.nodes, alpha, rng)
                        };
                        (node, payload(rng, params.payload_len))
                    })
                    .collect::<std::collections::BTreeMap<_, _>>()
                    .into_iter()
                    .collect();
                Op::Merge { batch }
            } else {
                Op::Compact {
                    k: rng.random_range(1..=2),
                }
            }
        }
        Projection::Adjacency => {
            if rng.random_bool(0.5) {
                Op::Traverse {
                    start: pick_zipf(&view.nodes, alpha, rng),
                    hops: rng.random_range(1..=3),
                }
            } else {
                let choice = rng.random_range(0..3);
                let u = if choice == 1 && !view.edges.is_empty() {
                    let (src, dst) = view.edges[rng.random_range(0..view.edges.len())];
                    Update::RemoveEdge { src, dst }
                } else if choice == 2 {
                    Update::SetPayload {
                        node: pick_zipf(&view.nodes, alpha, rng),
                        payload: payload(rng, params.payload_len),
                    }
                } else {
                    let src = view.nodes[rng.random_range(0..view.nodes.len())];
                    let mut dst = pick_zipf(&view.nodes, alpha, rng);
                    if dst == src {
                        dst = view.nodes[(view.nodes.iter().position(|n| *n == src).unwrap() + 1) % view.nodes.len()];
                    }
                    Update::AddEdge { src, dst }
                };
                Op::Update(u)
            }
        }
        Projection::Content => {
            if rng.random_bool(0.5) {
                let i = if rng.random_bool(params.dup_prob) {
                    rng.random_range(0..params.contents)
                } else {
                    params.contents + rng.random_range(0..1u64 << 32)
                };
                Op::Put { content: content_of(i) }
            } else {
                Op::Get {
                    hash: view.contents[rng.random_range(0..view.contents.len())],
                }
            }
        }
        Projection::Capability => {
            let delegated: Vec<_> = view.caps.iter().filter(|c| !c.3).collect();
            if delegated.is_empty() || rng.random_bool(0.5) {
                let (parent, region, rights, _) = &view.caps[rng.random_range(0..view.caps.len())];
                let (region, rights) = narrower(region, *rights, rng);
                Op::Grant {
                    parent: *parent,
                    region,
                    rights,
                    subject: format!("s{id}"),
                }
            } else {
                Op::Revoke {
                    cap: delegated[rng.random_range(0..delegated.len())].0,
                }
            }
        }
        Projection::Ownership => {
            let objects: Vec<u64> = (0..view.objects).collect();
            let object = pick_zipf(&objects, alpha, rng);
            if rng.random_bool(0.5) {
                Op::Own {
                    object,
                    value: payload(rng, params.payload_len),
                }
            } else {
                Op::Borrow { object }
            }
        }
    };
    Event { id, op }
}
