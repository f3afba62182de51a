//! Anti-commutativity measurement.
//!
//! Events are classified into six projections. For a pair of events the
//! harness forks a world twice, runs both events concurrently in each of
//! the two orders (begin both, apply both, end both) and compares the
//! observed results. Worlds come in two flavours per projection: the
//! composed engine and a simplified baseline adapter.

mod baseline;
mod engine;
mod gen;

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::capability::{CapId, Region, Rights};
use crate::cas::ContentHash;
use crate::stats::{wilson, Z95};

pub use baseline::{Acl, LocationStore, MergeLog, PageStore, SharedGraph, Unguarded};
pub use engine::{CapWorld, CasWorld, LineageWorld, OwnWorld};
pub use gen::{content_of, generate_event, initial_world, GenParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Projection {
    /// Local order (insert/delete).
    Order,
    /// Version history (merge/compact).
    History,
    /// Adjacency (traverse/update).
    Adjacency,
    /// Content (put/get).
    Content,
    /// Capabilities (grant/revoke).
    Capability,
    /// Ownership (own/borrow).
    Ownership,
}

impl Projection {
    pub const ALL: [Projection; 6] = [
        Projection::Order,
        Projection::History,
        Projection::Adjacency,
        Projection::Content,
        Projection::Capability,
        Projection::Ownership,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// `pi1` through `pi6`.
    pub fn label(self) -> &'static str {
        ["pi1", "pi2", "pi3", "pi4", "pi5", "pi6"][self.index()]
    }

    pub fn from_label(s: &str) -> Option<Projection> {
        Projection::ALL.into_iter().find(|p| p.label() == s)
    }

    pub fn kinds(self) -> [EventKind; 2] {
        use EventKind::*;
        match self {
            Projection::Order => [Insert, Delete],
            Projection::History => [Merge, Compact],
            Projection::Adjacency => [Traverse, Update],
            Projection::Content => [Put, Get],
            Projection::Capability => [Grant, Revoke],
            Projection::Ownership => [Own, Borrow],
        }
    }
}

impl fmt::Display for Projection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    Insert,
    Delete,
    Merge,
    Compact,
    Traverse,
    Update,
    Put,
    Get,
    Grant,
    Revoke,
    /// Exclusive lease: acquire, write, release.
    Own,
    /// Shared lease: acquire, read, release.
    Borrow,
}

impl EventKind {
    pub fn projection(self) -> Projection {
        use EventKind::*;
        match self {
            Insert | Delete => Projection::Order,
            Merge | Compact => Projection::History,
            Traverse | Update => Projection::Adjacency,
            Put | Get => Projection::Content,
            Grant | Revoke => Projection::Capability,
            Own | Borrow => Projection::Ownership,
        }
    }

    pub fn as_str(self) -> &'static str {
        use EventKind::*;
        match self {
            Insert => "insert",
            Delete => "delete",
            Merge => "merge",
            Compact => "compact",
            Traverse => "traverse",
            Update => "update",
            Put => "put",
            Get => "get",
            Grant => "grant",
            Revoke => "revoke",
            Own => "own",
            Borrow => "borrow",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Update {
    AddEdge { src: u64, dst: u64 },
    RemoveEdge { src: u64, dst: u64 },
    SetPayload { node: u64, payload: Vec<u8> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Op {
    Insert { node: u64, label: String, payload: Vec<u8> },
    Delete { node: u64 },
    /// Writes a batch of node payloads, creating missing nodes.
    Merge { batch: Vec<(u64, Vec<u8>)> },
    Compact { k: usize },
    Traverse { start: u64, hops: u32 },
    Update(Update),
    Put { content: Vec<u8> },
    Get { hash: ContentHash },
    Grant { parent: CapId, region: Region, rights: Rights, subject: String },
    Revoke { cap: CapId },
    Own { object: u64, value: Vec<u8> },
    Borrow { object: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub id: u64,
    pub op: Op,
}

impl Event {
    pub fn kind(&self) -> EventKind {
        match &self.op {
            Op::Insert { .. } => EventKind::Insert,
            Op::Delete { .. } => EventKind::Delete,
            Op::Merge { .. } => EventKind::Merge,
            Op::Compact { .. } => EventKind::Compact,
            Op::Traverse { .. } => EventKind::Traverse,
            Op::Update(_) => EventKind::Update,
            Op::Put { .. } => EventKind::Put,
            Op::Get { .. } => EventKind::Get,
            Op::Grant { .. } => EventKind::Grant,
            Op::Revoke { .. } => EventKind::Revoke,
            Op::Own { .. } => EventKind::Own,
            Op::Borrow { .. } => EventKind::Borrow,
        }
    }

    pub fn projection(&self) -> Projection {
        self.kind().projection()
    }
}

/// Why an event could not run in a world.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum EventError {
    #[error("lease conflict: {0}")]
    Lease(String),
    #[error("capability: {0}")]
    Capability(String),
    #[error("rejected: {0}")]
    Rejected(String),
    #[error("{0} events are not supported by this backend")]
    Unsupported(&'static str),
}

impl EventError {
    pub(crate) fn rejected(e: impl fmt::Display) -> Self {
        EventError::Rejected(e.to_string())
    }
}

/// What the event generator may inspect about a world.
#[derive(Debug, Clone, Default)]
pub struct GenView {
    pub nodes: Vec<u64>,
    pub edges: Vec<(u64, u64)>,
    pub contents: Vec<ContentHash>,
    /// Live capabilities as (id, region, rights, is_root).
    pub caps: Vec<(CapId, Region, Rights, bool)>,
    pub objects: u64,
}

/// A state events can be applied to.
pub trait World: Send {
    /// Acquires whatever the event holds for its duration.
    fn begin(&mut self, e: &Event) -> Result<(), EventError>;
    fn apply(&mut self, e: &Event) -> Result<(), EventError>;
    fn end(&mut self, e: &Event) -> Result<(), EventError>;
    /// Canonical bytes of the state as compared by observational
    /// equivalence, plus recorded read results.
    fn observe(&self) -> Vec<u8>;
    /// Full serialized state including physical layout.
    fn full_state(&self) -> Vec<u8>;
    fn fork(&self) -> Box<dyn World>;
    fn gen_view(&self) -> GenView;
    /// Drops history that no observation depends on.
    fn rebase(&mut self) {}
    fn backend(&self) -> &'static str;
}

/// Runs one event to completion.
pub fn step(w: &mut dyn World, e: &Event) -> Result<(), EventError> {
    w.begin(e)?;
    let r = w.apply(e);
    w.end(e)?;
    r
}

/// Runs `first` and `second` concurrently in that order on a fork of `w`.
pub fn run_ordering(w: &dyn World, first: &Event, second: &Event) -> Result<Box<dyn World>, EventError> {
    let mut f = w.fork();
    f.begin(first)?;
    if let Err(e) = f.begin(second) {
        f.end(first)?;
        return Err(e);
    }
    let r = f.apply(first).and_then(|_| f.apply(second));
    f.end(first)?;
    f.end(second)?;
    r.map(|_| f)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairOutcome {
    Commute,
    /// The two orders produce inequivalent states.
    Diverge,
    /// Exactly one order is legal.
    OrderDependentLegality,
}

impl PairOutcome {
    pub fn commutes(self) -> bool {
        self == PairOutcome::Commute
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CommuteError {
    #[error("neither ordering is applicable from this state")]
    IllegalFromState,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Result of one pair check, with the world reached by a legal ordering.
pub struct PairRun {
    pub outcome: PairOutcome,
    pub next: Box<dyn World>,
}

pub fn check_pair_run(e1: &Event, e2: &Event, state: &dyn World) -> Result<PairRun, CommuteError> {
    let a = run_ordering(state, e1, e2);
    let b = run_ordering(state, e2, e1);
    match (a, b) {
        (Ok(a), Ok(b)) => {
            let outcome = if a.observe() == b.observe() {
                PairOutcome::Commute
            } else {
                PairOutcome::Diverge
            };
            Ok(PairRun { outcome, next: a })
        }
        (Ok(w), Err(_)) | (Err(_), Ok(w)) => Ok(PairRun {
            outcome: PairOutcome::OrderDependentLegality,
            next: w,
        }),
        (Err(_), Err(_)) => Err(CommuteError::IllegalFromState),
    }
}

/// Applies `e1;e2` and `e2;e1` to independent forks of `state` and compares
/// them under observational equivalence.
pub fn check_pair(e1: &Event, e2: &Event, state: &dyn World) -> Result<PairOutcome, CommuteError> {
    check_pair_run(e1, e2, state).map(|r| r.outcome)
}

/// Which backend serves each projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Composition {
    /// `true` selects the baseline adapter for that projection.
    pub baseline: [bool; 6],
    pub name: &'static str,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Component {
    Ownership,
    Capability,
    Cas,
    GraphSplit,
}

impl Component {
    pub const ALL: [Component; 4] = [
        Component::Ownership,
        Component::Capability,
        Component::Cas,
        Component::GraphSplit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Component::Ownership => "ownership",
            Component::Capability => "capability",
            Component::Cas => "cas",
            Component::GraphSplit => "graph-split",
        }
    }

    pub fn parse(s: &str) -> Option<Component> {
        Component::ALL.into_iter().find(|c| c.as_str() == s)
    }

    /// Projections whose backend falls back to a baseline without it.
    pub fn projections(self) -> &'static [Projection] {
        match self {
            Component::Ownership => &[Projection::Order, Projection::Ownership],
            Component::Capability => &[Projection::Capability],
            Component::Cas => &[Projection::History, Projection::Content],
            Component::GraphSplit => &[Projection::Adjacency],
        }
    }
}

impl Composition {
    pub const FULL: Composition = Composition {
        baseline: [false; 6],
        name: "full",
    };

    /// Page store, merge log and unguarded shared mutation for the first,
    /// second, third and sixth projections; content store and capability
    /// lattice kept.
    pub const BASELINE: Composition = Composition {
        baseline: [true, true, true, false, false, true],
        name: "baseline",
    };

    pub fn without(component: Component) -> Composition {
        let mut baseline = [false; 6];
        for p in component.projections() {
            baseline[p.index()] = true;
        }
        let name = match component {
            Component::Ownership => "no-ownership",
            Component::Capability => "no-capability",
            Component::Cas => "no-cas",
            Component::GraphSplit => "no-graph-split",
        };
        Composition { baseline, name }
    }

    pub fn uses_baseline(&self, p: Projection) -> bool {
        self.baseline[p.index()]
    }

    /// Enabled components, `+`-joined.
    pub fn flags(&self) -> String {
        let on: Vec<_> = Component::ALL
            .into_iter()
            .filter(|c| c.projections().iter().all(|p| !self.uses_baseline(*p)))
            .map(Component::as_str)
            .collect();
        if on.is_empty() {
            "none".into()
        } else {
            on.join("+")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasureConfig {
    /// Counted pairs per repetition.
    pub horizon: usize,
    pub reps: usize,
    pub seed: u64,
    pub composition: Composition,
    pub params: GenParams,
}

impl MeasureConfig {
    pub fn new(horizon: usize, reps: usize, seed: u64, composition: Composition) -> Self {
        Self {
            horizon,
            reps,
            seed,
            composition,
            params: GenParams::default(),
        }
    }
}

/// One row of the commutation report.
#[derive(Debug, Clone, PartialEq)]
pub struct CommutationRow {
    pub projection: Projection,
    pub trials: u64,
    pub nc_count: u64,
    /// Non-commuting pairs caused by order-dependent legality.
    pub legality_count: u64,
    pub rate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub config: String,
    pub backend: &'static str,
}

impl CommutationRow {
    pub const CSV_HEADER: &'static str = "projection,trials,nc_count,rate,ci_lo,ci_hi,config";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{:.6},{}",
            self.projection, self.trials, self.nc_count, self.rate, self.ci_lo, self.ci_hi, self.config
        )
    }

    /// CI excludes zero.
    pub fn non_commuting(&self) -> bool {
        self.ci_lo > 0.0
    }
}

/// Seed for one (projection, repetition) stream.
pub fn stream_seed(seed: u64, projection: Projection, rep: u64) -> u64 {
    let mut z = seed ^ (projection.index() as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ rep.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const MAX_REDRAWS: usize = 10_000;
const REBASE_EVERY: usize = 64;

/// Counts for one repetition: (pairs, non-commuting, legality-caused).
fn run_rep(p: Projection, cfg: &MeasureConfig, rep: u64) -> Result<(u64, u64, u64), CommuteError> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, p, rep));
    let baseline = cfg.composition.uses_baseline(p);
    let mut world = initial_world(p, baseline, &cfg.params, &mut rng);
    let mut next_id = 0u64;
    let (mut nc, mut legality) = (0u64, 0u64);
    for i in 0..cfg.horizon {
        if i > 0 && i % REBASE_EVERY == 0 {
            world.rebase();
        }
        if gen::exhausted(p, &world.gen_view(), &cfg.params) {
            world = initial_world(p, baseline, &cfg.params, &mut rng);
        }
        let mut counted = false;
        for _ in 0..MAX_REDRAWS {
            let view = world.gen_view();
            let e1 = generate_event(p, &view, &cfg.params, &mut rng, next_id);
            let e2 = generate_event(p, &view, &cfg.params, &mut rng, next_id + 1);
            next_id += 2;
            match check_pair_run(&e1, &e2, world.as_ref()) {
                Ok(run) => {
                    match run.outcome {
                        PairOutcome::Commute => {}
                        PairOutcome::Diverge => nc += 1,
                        PairOutcome::OrderDependentLegality => {
                            nc += 1;
                            legality += 1;
                        }
                    }
                    world = run.next;
                    counted = true;
                    break;
                }
                Err(CommuteError::IllegalFromState) => continue,
                Err(e) => return Err(e),
            }
        }
        if !counted {
            return Err(CommuteError::InvalidConfig(format!("{p}: no legal pair in {MAX_REDRAWS} draws")));
        }
    }
    Ok((cfg.horizon as u64, nc, legality))
}

/// Pooled non-commutation rate for one projection with a 95% Wilson CI.
pub fn measure(p: Projection, cfg: &MeasureConfig) -> Result<CommutationRow, CommuteError> {
    if cfg.reps < 30 {
        return Err(CommuteError::InvalidConfig(format!("reps must be at least 30, got {}", cfg.reps)));
    }
    if cfg.horizon == 0 {
        return Err(CommuteError::InvalidConfig("horizon must be positive".into()));
    }
    let per_rep: Vec<_> = (0..cfg.reps as u64)
        .into_par_iter()
        .map(|rep| run_rep(p, cfg, rep))
        .collect::<Result<_, _>>()?;
    let (trials, nc, legality) = per_rep
        .iter()
        .fold((0, 0, 0), |(t, n, l), (a, b, c)| (t + a, n + b, l + c));
    let (ci_lo, ci_hi) = wilson(nc, trials, Z95);
    Ok(CommutationRow {
        projection: p,
        trials,
        nc_count: nc,
        legality_count: legality,
        rate: nc as f64 / trials as f64,
        ci_lo,
        ci_hi,
        config: cfg.composition.name.to_string(),
        backend: backend_name(p, cfg.composition.uses_baseline(p)),
    })
}

pub fn measure_all(cfg: &MeasureConfig) -> Result<Vec<CommutationRow>, CommuteError> {
    Projection::ALL.iter().map(|p| measure(*p, cfg)).collect()
}

pub fn backend_name(p: Projection, baseline: bool) -> &'static str {
    match (p, baseline) {
        (Projection::Order, false) | (Projection::History, false) | (Projection::Adjacency, false) => "lineage",
        (Projection::Content, false) => "pack-store",
        (Projection::Capability, false) => "lattice",
        (Projection::Ownership, false) => "leases",
        (Projection::Order, true) => "page-store",
        (Projection::History, true) => "merge-log",
        (Projection::Adjacency, true) => "shared-graph",
        (Projection::Content, true) => "location-store",
        (Projection::Capability, true) => "acl",
        (Projection::Ownership, true) => "unguarded",
    }
}

pub fn report_csv(rows: &[CommutationRow]) -> String {
    let mut s = String::from(CommutationRow::CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// `projection,config,rate` lines for external plotting.
pub fn heatmap_csv(rows: &[CommutationRow]) -> String {
    let mut s = String::from("projection,config,rate\n");
    for r in rows {
        s.push_str(&format!("{},{},{:.6}\n", r.projection, r.config, r.rate));
    }
    s
}

/// Baseline and composed reports with the reduction check.
#[derive(Debug, Clone)]
pub struct ReductionSummary {
    pub baseline: Vec<CommutationRow>,
    pub composed: Vec<CommutationRow>,
    pub baseline_nc: Vec<Projection>,
    pub composed_nc: Vec<Projection>,
    /// Count stated by the headline claim for the baseline.
    pub headline_baseline: usize,
    pub holds: bool,
}

impl ReductionSummary {
    pub fn summary_lines(&self) -> Vec<String> {
        let names = |v: &[Projection]| v.iter().map(|p| p.label()).collect::<Vec<_>>().join(",");
        vec![
            format!(
                "baseline non-commuting: {}/6 [{}] (headline claim: {}/6)",
                self.baseline_nc.len(),
                names(&self.baseline_nc),
                self.headline_baseline
            ),
            format!("composed non-commuting: {}/6 [{}]", self.composed_nc.len(), names(&self.composed_nc)),
            format!("reduction holds: {}", self.holds),
        ]
    }
}

/// Composed-engine expectation: the content projection exactly zero, the
/// capability projection with a CI excluding zero, the rest with CI upper
/// bound below one percent.
pub fn composed_expectation_holds(rows: &[CommutationRow]) -> bool {
    rows.iter().all(|r| match r.projection {
        Projection::Content => r.nc_count == 0,
        Projection::Capability => r.ci_lo > 0.0,
        _ => r.ci_hi < 0.01,
    })
}

pub fn reduction_suite(seed: u64, horizon: usize, reps: usize) -> Result<ReductionSummary, CommuteError> {
    let base_cfg = MeasureConfig::new(horizon, reps, seed, Composition::BASELINE);
    let full_cfg = MeasureConfig::new(horizon, reps, seed, Composition::FULL);
    let baseline = measure_all(&base_cfg)?;
    let composed = measure_all(&full_cfg)?;
    let nc = |rows: &[CommutationRow]| rows.iter().filter(|r| r.non_commuting()).map(|r| r.projection).collect::<Vec<_>>();
    let baseline_nc = nc(&baseline);
    let composed_nc = nc(&composed);
    let holds = baseline_nc.len() >= 4 && composed_nc == [Projection::Capability] && composed_expectation_holds(&composed);
    Ok(ReductionSummary {
        baseline,
        composed,
        baseline_nc,
        composed_nc,
        headline_baseline: 4,
        holds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world(p: Projection, baseline: bool, seed: u64) -> Box<dyn World> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        initial_world(p, baseline, &GenParams::default(), &mut rng)
    }

    #[test]
    fn every_kind_maps_to_one_projection() {
        let mut seen = std::collections::BTreeSet::new();
        for p in Projection::ALL {
            for k in p.kinds() {
                assert_eq!(k.projection(), p);
                assert!(seen.insert(k));
            }
        }
        assert_eq!(seen.len(), 12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for p in Projection::ALL {
            for baseline in [false, true] {
                let w = world(p, baseline, 2);
                for i in 0..50 {
                    let e = generate_event(p, &w.gen_view(), &GenParams::default(), &mut rng, i);
                    assert_eq!(e.projection(), p);
                }
            }
        }
    }

    #[test]
    fn put_put_commutes() {
        let w = world(Projection::Content, false, 3);
        let e1 = Event {
            id: 0,
            op: Op::Put { content: b"x".to_vec() },
        };
        let e2 = Event {
            id: 1,
            op: Op::Put { content: b"y".to_vec() },
        };
        assert_eq!(check_pair(&e1, &e2, w.as_ref()), Ok(PairOutcome::Commute));
        let b = world(Projection::Content, true, 3);
        assert_eq!(check_pair(&e1, &e2, b.as_ref()), Ok(PairOutcome::Diverge));
    }

    #[test]
    fn grant_revoke_diverges() {
        let w = world(Projection::Capability, false, 4);
        let v = w.gen_view();
        let (parent, region, rights, _) = v.caps.iter().find(|c| !c.3).cloned().unwrap();
        let grant = Event {
            id: 0,
            op: Op::Grant {
                parent,
                region: region.clone(),
                rights,
                subject: "child".into(),
            },
        };
        let revoke = Event {
            id: 1,
            op: Op::Revoke { cap: parent },
        };
        assert_eq!(check_pair(&grant, &revoke, w.as_ref()), Ok(PairOutcome::OrderDependentLegality));
    }

    #[test]
    fn traverse_traverse_commutes() {
        for baseline in [false, true] {
            let w = world(Projection::Adjacency, baseline, 5);
            let n = w.gen_view().nodes;
            let e1 = Event {
                id: 0,
                op: Op::Traverse { start: n[0], hops: 3 },
            };
            let e2 = Event {
                id: 1,
                op: Op::Traverse { start: n[1], hops: 2 },
            };
            assert_eq!(check_pair(&e1, &e2, w.as_ref()), Ok(PairOutcome::Commute));
        }
    }

    #[test]
    fn conflicting_leases_are_illegal() {
        let w = world(Projection::Ownership, false, 6);
        let own = Event {
            id: 0,
            op: Op::Own { object: 0, value: vec![1] },
        };
        let borrow = Event {
            id: 1,
            op: Op::Borrow { object: 0 },
        };
        assert_eq!(check_pair(&own, &borrow, w.as_ref()), Err(CommuteError::IllegalFromState));
        let b = world(Projection::Ownership, true, 6);
        assert_eq!(check_pair(&own, &borrow, b.as_ref()), Ok(PairOutcome::Diverge));
    }

    #[test]
    fn measure_is_deterministic_and_validates() {
        let cfg = MeasureConfig::new(20, 30, 42, Composition::FULL);
        let a = measure(Projection::Capability, &cfg).unwrap();
        let b = measure(Projection::Capability, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.ci_lo <= a.rate && a.rate <= a.ci_hi);
        let bad = MeasureConfig::new(20, 10, 42, Composition::FULL);
        assert!(matches!(measure(Projection::Content, &bad), Err(CommuteError::InvalidConfig(_))));
    }

    #[test]
    fn composition_flags() {
        assert_eq!(Composition::FULL.flags(), "ownership+capability+cas+graph-split");
        assert_eq!(Composition::without(Component::Cas).flags(), "ownership+capability+graph-split");
        assert!(Composition::without(Component::Ownership).uses_baseline(Projection::Ownership));
        assert_eq!(Component::parse("graph-split"), Some(Component::GraphSplit));
    }
}
