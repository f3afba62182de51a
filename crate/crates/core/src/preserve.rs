//! Per-projection preservation checks, run against the engine or against
//! the baseline adapter that replaces an ablated component.

use std::collections::BTreeMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::capability::{Region, Rights};
use crate::cas::{ContentHash, PackStore};
use crate::commute::{
    content_of, generate_event, initial_world, step, Composition, Event, GenParams, LineageWorld, MergeLog, Op,
    PageStore, Projection, World,
};
use crate::graph::{Edge, EdgeType, GraphState, Label, LabelSchema, Mutation, NodeId, Observation, RegionMap};
use crate::ownership::{stress_exclusivity, stress_unguarded};
use crate::snapshot::Lineage;
use crate::workload::{gen_ba, sub_seed, Orientation};

/// Sizes of the randomized checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreserveConfig {
    pub seed: u64,
    /// Independent event sequences for the order and history checks.
    pub sequences: usize,
    pub steps: usize,
    /// Attempts for the schema, duplicate-put and illegal-grant checks.
    pub attempts: usize,
    pub stress_workers: usize,
    pub stress_ops: u64,
}

impl Default for PreserveConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            sequences: 20,
            steps: 40,
            attempts: 2000,
            stress_workers: 8,
            stress_ops: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub projection: Projection,
    pub test: &'static str,
    pub backend: &'static str,
    pub trials: u64,
    pub failures: u64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.trials > 0
    }

    pub fn line(&self) -> String {
        format!(
            "{} {} [{}]: {}/{} failures {}",
            self.projection,
            self.test,
            self.backend,
            self.failures,
            self.trials,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

#[derive(Debug, Clone)]
pub struct PreservationReport {
    pub composition: Composition,
    pub checks: Vec<CheckResult>,
}

impl PreservationReport {
    pub fn passed(&self) -> usize {
        self.checks.iter().filter(|c| c.passed()).count()
    }

    /// Fraction of checks passing.
    pub fn rate(&self) -> f64 {
        self.passed() as f64 / self.checks.len() as f64
    }

    pub fn summary_line(&self) -> String {
        format!("preservation checks passed: {}/{}", self.passed(), self.checks.len())
    }
}

pub fn run_checks(composition: &Composition, cfg: &PreserveConfig) -> PreservationReport {
    let checks = Projection::ALL
        .into_iter()
        .map(|p| {
            let baseline = composition.uses_baseline(p);
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, "preserve", p.index() as u64));
            match p {
                Projection::Order => order_check(baseline, cfg, &mut rng),
                Projection::History => history_check(baseline, cfg, &mut rng),
                Projection::Adjacency => schema_check(baseline, cfg, &mut rng),
                Projection::Content => duplicate_put_check(baseline, cfg, &mut rng),
                Projection::Capability => illegal_grant_check(baseline, cfg, &mut rng),
                Projection::Ownership => race_check(baseline, cfg),
            }
        })
        .collect();
    PreservationReport {
        composition: *composition,
        checks,
    }
}

fn start_graph(params: &GenParams, rng: &mut ChaCha8Rng) -> GraphState {
    let ba = gen_ba(params.nodes, params.ba_m, rng.next_u64()).expect("valid graph parameters");
    ba.to_graph(Orientation::NewToOld, |_| {
        let mut v = vec![0u8; params.payload_len];
        rng.fill_bytes(&mut v);
        v
    })
}

fn payloads(g: &GraphState) -> BTreeMap<u64, Vec<u8>> {
    g.nodes().map(|(id, n)| (id.0, n.payload.clone())).collect()
}

/// Runs `steps` generated events on `live`, reloads it from a logical image
/// halfway through and replays the rest on the reload. Any difference in
/// legality or final observation is a failure.
fn replay_diff<W: World>(
    mut live: W,
    reload: impl Fn(&W) -> W,
    p: Projection,
    steps: usize,
    params: &GenParams,
    rng: &mut ChaCha8Rng,
) -> bool {
    let mut reloaded: Option<W> = None;
    for i in 0..steps {
        if i == steps / 2 {
            reloaded = Some(reload(&live));
        }
        let e = generate_event(p, &live.gen_view(), params, rng, i as u64);
        let a = step(&mut live, &e).is_ok();
        if let Some(r) = reloaded.as_mut() {
            if step(r, &e).is_ok() != a {
                return false;
            }
        }
    }
    reloaded.is_some_and(|r| r.observe() == live.observe())
}

fn order_check(baseline: bool, cfg: &PreserveConfig, rng: &mut ChaCha8Rng) -> CheckResult {
    let params = GenParams::default();
    let mut failures = 0;
    for _ in 0..cfg.sequences {
        let g = start_graph(&params, rng);
        let ok = if baseline {
            replay_diff(PageStore::new(payloads(&g)), PageStore::reload, Projection::Order, cfg.steps, &params, rng)
        } else {
            let seg = params.segment_bytes;
            let live = LineageWorld::new(&g, seg);
            let reload = |w: &LineageWorld| LineageWorld::new(&w.lineage().with_head_graph(|g| g.clone()), seg);
            replay_diff(live, reload, Projection::Order, cfg.steps, &params, rng)
        };
        failures += !ok as u64;
    }
    CheckResult {
        projection: Projection::Order,
        test: "replay diff=0",
        backend: if baseline { "page-store" } else { "lineage" },
        trials: cfg.sequences as u64,
        failures,
    }
}

/// Runs merges and compactions, recording the state after every merge, and
/// asks the backend to reproduce that version sequence afterwards.
fn version_history<W: World>(
    mut w: W,
    versions: impl Fn(&W) -> Vec<BTreeMap<u64, Vec<u8>>>,
    steps: usize,
    params: &GenParams,
    rng: &mut ChaCha8Rng,
) -> (W, bool) {
    let mut recorded = vec![versions(&w).pop().expect("initial version")];
    for i in 0..steps {
        let e = generate_event(Projection::History, &w.gen_view(), params, rng, i as u64);
        let merge = matches!(e.op, Op::Merge { .. });
        if step(&mut w, &e).is_ok() && merge {
            recorded.push(versions(&w).pop().expect("current version"));
        }
    }
    let ok = versions(&w) == recorded;
    (w, ok)
}

fn lineage_versions(w: &LineageWorld) -> Vec<BTreeMap<u64, Vec<u8>>> {
    let l = w.lineage();
    let chain = l.chain(&l.head()).expect("head is on its own chain");
    chain
        .iter()
        .skip(1)
        .map(|link| payloads(&l.view(&link.snapshot).expect("history content retained")))
        .collect()
}

fn history_check(baseline: bool, cfg: &PreserveConfig, rng: &mut ChaCha8Rng) -> CheckResult {
    let params = GenParams::default();
    let mut failures = 0;
    for _ in 0..cfg.sequences {
        let g = start_graph(&params, rng);
        let ok = if baseline {
            let log = MergeLog::new(payloads(&g).into_iter().collect());
            version_history(log, MergeLog::versions, cfg.steps, &params, rng).1
        } else {
            let w = LineageWorld::new(&g, params.segment_bytes);
            let (w, ok) = version_history(w, lineage_versions, cfg.steps, &params, rng);
            let head = w.lineage().head();
            let ticks = w.lineage().chain(&head).expect("chain").windows(2).all(|p| p[0].snapshot.tick < p[1].snapshot.tick);
            ok && ticks && w.lineage().lineage_check(&head).is_ok()
        };
        failures += !ok as u64;
    }
    CheckResult {
        projection: Projection::History,
        test: "lineage check",
        backend: if baseline { "merge-log" } else { "lineage" },
        trials: cfg.sequences as u64,
        failures,
    }
}

/// Random edge insertions against a two-label schema. The engine must end
/// with no violating edge and must have accepted every conforming one.
fn schema_check(baseline: bool, cfg: &PreserveConfig, rng: &mut ChaCha8Rng) -> CheckResult {
    let (a, b, link) = (Label::from("a"), Label::from("b"), EdgeType::from("link"));
    let schema = LabelSchema::new([(a.clone(), link.clone(), b.clone()), (b.clone(), link.clone(), b.clone())]);
    let n = 32u64;
    let mut g = GraphState::new();
    let mut nodes = Observation::new();
    for i in 0..n {
        let label = if rng.random_bool(0.5) { a.clone() } else { b.clone() };
        g.insert_node(NodeId(i), label.clone(), Vec::new()).expect("fresh id");
        nodes.push(Mutation::AddNode {
            id: NodeId(i),
            label,
            payload: Vec::new(),
        });
    }
    let lineage = Lineage::new(std::sync::Arc::new(PackStore::in_memory(Default::default())), Some(schema.clone()));
    lineage.import(&nodes, 1, 0, RegionMap::PerNode).expect("nodes conform");
    let mut missed_legal = 0u64;
    for t in 0..cfg.attempts as u64 {
        let (src, dst) = (NodeId(rng.random_range(0..n)), NodeId(rng.random_range(0..n)));
        if src == dst {
            continue;
        }
        let legal = schema.check_edge(&g, src, dst, &link).is_ok();
        if baseline {
            g.insert_edge(src, dst, link.clone()).expect("nodes exist");
        } else {
            let obs = Observation {
                mutations: vec![Mutation::AddEdge(Edge {
                    src,
                    dst,
                    etype: link.clone(),
                })],
            };
            let accepted = lineage.import(&obs, t + 2, 0, RegionMap::PerNode).is_ok();
            missed_legal += (legal && !accepted) as u64;
        }
    }
    let final_graph = if baseline { g } else { lineage.with_head_graph(|g| g.clone()) };
    CheckResult {
        projection: Projection::Adjacency,
        test: "schema conformance",
        backend: if baseline { "shared-graph" } else { "lineage" },
        trials: cfg.attempts as u64,
        failures: schema.violations(&final_graph).len() as u64 + missed_legal,
    }
}

/// Every put of already stored content must leave the full serialized
/// state untouched.
fn duplicate_put_check(baseline: bool, cfg: &PreserveConfig, rng: &mut ChaCha8Rng) -> CheckResult {
    let params = GenParams::default();
    let mut w = initial_world(Projection::Content, baseline, &params, rng);
    let (mut dups, mut failures) = (0u64, 0u64);
    for i in 0..cfg.attempts as u64 {
        let k = rng.random_range(0..params.contents * 2);
        let content = content_of(k);
        let present = w.gen_view().contents.contains(&ContentHash::of(&content));
        let before = w.full_state();
        step(w.as_mut(), &Event { id: i, op: Op::Put { content } }).expect("put accepted");
        if present {
            dups += 1;
            failures += (w.full_state() != before) as u64;
        }
    }
    CheckResult {
        projection: Projection::Content,
        test: "duplicate-put zero writes",
        backend: w.backend(),
        trials: dups,
        failures,
    }
}

/// Grants that widen the parent's region or rights must fail.
fn illegal_grant_check(baseline: bool, cfg: &PreserveConfig, rng: &mut ChaCha8Rng) -> CheckResult {
    let params = GenParams::default();
    let mut w = initial_world(Projection::Capability, baseline, &params, rng);
    let (mut trials, mut failures) = (0u64, 0u64);
    for i in 0..cfg.attempts as u64 {
        let caps: Vec<_> = w.gen_view().caps.into_iter().filter(|c| !c.3).collect();
        if caps.is_empty() {
            break;
        }
        let (parent, region, rights, _) = caps[rng.random_range(0..caps.len())].clone();
        let widen_region = region != Region::all() && (rights == Rights::Admin || rng.random_bool(0.5));
        let (r, rt) = if widen_region {
            (Region::all(), rights)
        } else if rights != Rights::Admin {
            (region, Rights::Admin)
        } else {
            continue;
        };
        trials += 1;
        let e = Event {
            id: i,
            op: Op::Grant {
                parent,
                region: r,
                rights: rt,
                subject: format!("x{i}"),
            },
        };
        failures += step(w.as_mut(), &e).is_ok() as u64;
    }
    CheckResult {
        projection: Projection::Capability,
        test: "failed illegal grant",
        backend: w.backend(),
        trials,
        failures,
    }
}

fn race_check(baseline: bool, cfg: &PreserveConfig) -> CheckResult {
    let per_worker = cfg.stress_ops / cfg.stress_workers as u64;
    let seed = sub_seed(cfg.seed, "stress", 0);
    let r = if baseline {
        stress_unguarded(cfg.stress_workers, per_worker, 4, seed)
    } else {
        stress_exclusivity(cfg.stress_workers, per_worker, 4, seed)
    };
    CheckResult {
        projection: Projection::Ownership,
        test: "race detector zero",
        backend: if baseline { "unguarded" } else { "lease-table" },
        trials: r.ops,
        failures: r.violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::commute::Component;

    fn quick() -> PreserveConfig {
        PreserveConfig {
            sequences: 6,
            steps: 30,
            attempts: 400,
            stress_ops: 20_000,
            ..Default::default()
        }
    }

    #[test]
    fn full_engine_passes_all() {
        let r = run_checks(&Composition::FULL, &quick());
        for c in &r.checks {
            assert!(c.passed(), "{}", c.line());
        }
        assert_eq!(r.summary_line(), "preservation checks passed: 6/6");
    }

    #[test]
    fn ablations_fail_their_projections() {
        let cfg = quick();
        for comp in Component::ALL {
            let r = run_checks(&Composition::without(comp), &cfg);
            for c in &r.checks {
                let ablated = comp.projections().contains(&c.projection);
                assert_eq!(c.passed(), !ablated, "{comp:?}: {}", c.line());
            }
        }
    }
}
