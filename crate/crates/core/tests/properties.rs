//! Property tests over the public API.

use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;

use strata::capability::{CapabilityAuthority, Expiry, Region, Rights};
use strata::cas::{Pack, PackStore, StoreConfig};
use strata::config::RunConfig;
use strata::graph::{EdgeType, GraphState, Label, NodeId, RegionMap, WriteAuth};
use strata::ownership::{Lease, LeaseTable, ObjectId};
use strata::snapshot::{obs_equiv, observation_of, Lineage, Snapshot};
use strata::stats::wilson;

fn payloads() -> impl Strategy<Value = Vec<Vec<u8>>> {
    prop::collection::vec(prop::collection::vec(any::<u8>(), 0..64), 0..24)
}

fn points() -> impl Strategy<Value = BTreeSet<u64>> {
    prop::collection::btree_set(0u64..64, 0..24)
}

fn rights() -> impl Strategy<Value = Rights> {
    (0u8..5).prop_map(|r| Rights::from_u8(r).unwrap())
}

proptest! {
    #[test]
    fn store_round_trips_and_dedups(items in payloads()) {
        let store = PackStore::in_memory(StoreConfig { segment_target_bytes: 512, ..Default::default() });
        let hashes: Vec<_> = items.iter().map(|c| store.put(c).unwrap()).collect();
        let physical = store.stats().physical_bytes;
        for (c, h) in items.iter().zip(&hashes) {
            prop_assert_eq!(&store.get(h).unwrap(), c);
            prop_assert_eq!(store.put(c).unwrap(), *h);
        }
        prop_assert_eq!(store.stats().physical_bytes, physical);
        let distinct: BTreeSet<_> = items.iter().collect();
        prop_assert_eq!(store.hashes().len(), distinct.len());
    }

    #[test]
    fn pack_concat_is_a_monoid(a in payloads(), b in payloads(), c in payloads()) {
        let p = |v: &Vec<Vec<u8>>| Pack::from_payloads(v.iter().map(Vec::as_slice));
        let (a, b, c) = (p(&a), p(&b), p(&c));
        let left = a.concat(&b).unwrap().concat(&c).unwrap();
        let right = a.concat(&b.concat(&c).unwrap()).unwrap();
        prop_assert_eq!(left.digest(), right.digest());
        prop_assert_eq!(Pack::empty().concat(&a).unwrap().digest(), a.digest());
        prop_assert_eq!(a.concat(&Pack::empty()).unwrap().digest(), a.digest());
        let reparsed = Pack::parse(left.as_bytes(), true).unwrap();
        prop_assert_eq!(reparsed.digest(), left.digest());
    }

    #[test]
    fn region_algebra_matches_sets(x in points(), y in points()) {
        let (rx, ry) = (Region::from_points(x.clone()), Region::from_points(y.clone()));
        prop_assert_eq!(rx.is_subset(&ry), x.is_subset(&y));
        let inter = rx.intersect(&ry);
        let uni = rx.union(&ry);
        for i in 0..64 {
            prop_assert_eq!(inter.contains(i), x.contains(&i) && y.contains(&i));
            prop_assert_eq!(uni.contains(i), x.contains(&i) || y.contains(&i));
            prop_assert_eq!(rx.contains(i), x.contains(&i));
        }
    }

    #[test]
    fn grants_never_widen(
        parent in points(),
        pr in rights(),
        steps in prop::collection::vec((points(), rights(), any::<bool>()), 1..12),
    ) {
        let auth = CapabilityAuthority::new();
        let root = auth.mint_root(Region::from_points(parent.clone()), pr, Expiry::Never, "root");
        let mut caps = vec![root];
        for (i, (req, r, from_last)) in steps.into_iter().enumerate() {
            let p = if from_last { caps.last().unwrap().clone() } else { caps[0].clone() };
            match auth.grant(&p, &Region::from_points(req.clone()), r, None, &format!("s{i}")) {
                Ok(c) => {
                    prop_assert!(c.region.is_subset(&p.region));
                    prop_assert!(c.rights <= p.rights);
                    caps.push(c);
                }
                Err(_) => {
                    let legal = Region::from_points(req).is_subset(&p.region) && r <= p.rights;
                    prop_assert!(!legal);
                }
            }
        }
        prop_assert!(auth.anti_escalation_violations().is_empty());
    }

    #[test]
    fn leases_keep_exclusivity(ops in prop::collection::vec((0u8..3, 0u64..3), 1..80)) {
        let t = LeaseTable::new();
        let mut held: Vec<Lease> = Vec::new();
        for (kind, obj) in ops {
            match kind {
                0 => { if let Ok(l) = t.acquire_read(ObjectId(obj)) { held.push(l.into()); } }
                1 => { if let Ok(l) = t.acquire_write(ObjectId(obj)) { held.push(l.into()); } }
                _ => { if let Some(l) = held.pop() { t.release(l).unwrap(); } }
            }
            for o in 0..3 {
                let e = t.entry(ObjectId(o));
                prop_assert!(!(e.writer && e.readers > 0));
                let readers = held.iter().filter(|l| matches!(l, Lease::Read(_)) && l.object() == ObjectId(o)).count();
                let writers = held.iter().filter(|l| matches!(l, Lease::Write(_)) && l.object() == ObjectId(o)).count();
                prop_assert_eq!(e.readers as usize, readers);
                prop_assert_eq!(e.writer, writers == 1);
                prop_assert!(writers <= 1);
            }
        }
    }

    #[test]
    fn snapshot_bytes_round_trip_and_compaction_is_equivalent(
        nodes in prop::collection::btree_map(0u64..30, prop::collection::vec(any::<u8>(), 0..40), 1..20),
        edges in prop::collection::vec((0u64..30, 0u64..30), 0..30),
        k in 1usize..4,
    ) {
        let mut g = GraphState::new();
        for (id, p) in &nodes {
            g.insert_node(NodeId(*id), Label::from("n"), p.clone()).unwrap();
        }
        for (s, d) in edges {
            if nodes.contains_key(&s) && nodes.contains_key(&d) {
                g.insert_edge(NodeId(s), NodeId(d), EdgeType::from("e")).unwrap();
            }
        }
        let auth = CapabilityAuthority::new();
        let cap = auth.mint_root(Region::all(), Rights::Admin, Expiry::Never, "w");
        let leases = LeaseTable::new();
        let held = vec![leases.acquire_write(ObjectId(1)).unwrap()];
        let w = WriteAuth { authority: &auth, cap: &cap, leases: &leases, held: &held, regions: RegionMap::Single(ObjectId(1)) };
        let store = Arc::new(PackStore::in_memory(StoreConfig { segment_target_bytes: 128, ..Default::default() }));
        let l = Lineage::new(store, None);
        let s = l.commit(&observation_of(&g), 1, &w).unwrap();

        let back = Snapshot::from_canonical_bytes(&s.canonical_bytes()).unwrap();
        prop_assert_eq!(back.hash, s.hash);
        prop_assert_eq!(&back.root, &s.root);
        prop_assert_eq!(&l.view(&s).unwrap(), &g);

        let c = l.compact(&s, k).unwrap();
        prop_assert!(c.snapshot.fragment_count() <= k);
        prop_assert!(obs_equiv(&s, &c.snapshot));
        prop_assert_eq!(&l.view(&c.snapshot).unwrap(), &g);
    }

    #[test]
    fn wilson_interval_brackets_the_rate(n in 1u64..100_000, frac in 0.0f64..=1.0) {
        let k = (frac * n as f64).floor() as u64;
        let (lo, hi) = wilson(k, n, 1.96);
        let p = k as f64 / n as f64;
        prop_assert!(0.0 <= lo && lo <= p + 1e-12 && p <= hi + 1e-12 && hi <= 1.0);
        if k == 0 { prop_assert_eq!(lo, 0.0); }
    }

    #[test]
    fn config_manifest_round_trips(seed in any::<u64>(), n in 100usize..20_000, alpha in 0.0f64..3.0, reps in 30usize..100) {
        let text = format!("seed={seed}\nn={n}\nalpha={alpha}\nreps={reps}\n");
        let c = RunConfig::parse(&text).unwrap();
        prop_assert_eq!(RunConfig::parse(&c.manifest()).unwrap(), c);
    }
}
