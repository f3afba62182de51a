//! Workload primitives: Barabási–Albert graphs and Zipf rank sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use thiserror::Error;

use crate::graph::{EdgeType, GraphState, Label, NodeId};
use crate::stats::linear_fit;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WorkloadError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// Undirected preferential-attachment graph; each edge is stored as
/// `(newer, older)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaGraph {
    pub n: u64,
    pub m: u64,
    pub edges: Vec<(u64, u64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// One directed edge from the newer endpoint to the older one.
    NewToOld,
    /// Both directions.
    Both,
}

/// Preferential attachment: an `(m+1)`-clique, then every new node links to
/// `m` distinct existing nodes chosen proportionally to degree.
pub fn gen_ba(n: u64, m: u64, seed: u64) -> Result<BaGraph, WorkloadError> {
    if m < 1 || n <= m {
        return Err(WorkloadError::InvalidParams(format!("need n > m >= 1, got n={n} m={m}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::with_capacity((n * m) as usize);
    // every edge contributes both endpoints, so uniform picks are degree-weighted
    let mut endpoints: Vec<u64> = Vec::with_capacity((2 * n * m) as usize);
    for j in 1..=m {
        for i in 0..j {
            edges.push((j, i));
            endpoints.extend([j, i]);
        }
    }
    let mut targets = Vec::with_capacity(m as usize);
    for v in (m + 1)..n {
        targets.clear();
        while (targets.len() as u64) < m {
            let t = endpoints[rng.random_range(0..endpoints.len())];
            if !targets.contains(&t) {
                targets.push(t);
            }
        }
        for &t in &targets {
            edges.push((v, t));
            endpoints.extend([v, t]);
        }
    }
    Ok(BaGraph { n, m, edges })
}

impl BaGraph {
    pub fn degrees(&self) -> Vec<u64> {
        let mut d = vec![0u64; self.n as usize];
        for (a, b) in &self.edges {
            d[*a as usize] += 1;
            d[*b as usize] += 1;
        }
        d
    }

    /// Materializes the graph with label `v` on every node and edge type
    /// `link`, giving each node the payload produced by `payload`.
    pub fn to_graph(&self, orientation: Orientation, mut payload: impl FnMut(u64) -> Vec<u8>) -> GraphState {
        let mut g = GraphState::new();
        let label = Label::from("v");
        let link = EdgeType::from("link");
        for i in 0..self.n {
            g.insert_node(NodeId(i), label.clone(), payload(i)).expect("fresh ids");
        }
        for (a, b) in &self.edges {
            g.insert_edge(NodeId(*a), NodeId(*b), link.clone()).expect("endpoints exist");
            if orientation == Orientation::Both {
                g.insert_edge(NodeId(*b), NodeId(*a), link.clone()).expect("endpoints exist");
            }
        }
        g
    }
}

/// BA graph with newer-to-older edges and empty payloads.
pub fn gen_graph(n: u64, m: u64, seed: u64) -> Result<GraphState, WorkloadError> {
    Ok(gen_ba(n, m, seed)?.to_graph(Orientation::NewToOld, |_| Vec::new()))
}

/// Power-law exponent estimated by least squares on the log-log degree
/// CCDF, over degrees at least `min_degree` with ten or more nodes at or
/// above them.
pub fn tail_exponent(degrees: &[u64], min_degree: u64) -> f64 {
    let mut sorted: Vec<u64> = degrees.iter().copied().filter(|d| *d >= min_degree).collect();
    sorted.sort_unstable();
    let n = degrees.len() as f64;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let d = sorted[i];
        let at_least = sorted.len() - i;
        if at_least < 10 {
            break;
        }
        xs.push((d as f64).ln());
        ys.push((at_least as f64 / n).ln());
        while i < sorted.len() && sorted[i] == d {
            i += 1;
        }
    }
    let (slope, _) = linear_fit(&xs, &ys);
    1.0 - slope
}

/// Ranks in `1..=n` with probability proportional to `r^-alpha`.
#[derive(Debug, Clone)]
pub struct ZipfSampler {
    dist: Zipf<f64>,
    rng: ChaCha8Rng,
}

impl ZipfSampler {
    pub fn new(alpha: f64, n: u64, seed: u64) -> Result<Self, WorkloadError> {
        Ok(Self {
            dist: zipf(alpha, n)?,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn sample(&mut self) -> u64 {
        self.dist.sample(&mut self.rng) as u64
    }
}

impl Iterator for ZipfSampler {
    type Item = u64;

    fn next(&mut self) -> Option<u64> {
        Some(self.sample())
    }
}

/// Validated Zipf distribution over `1..=n`.
pub fn zipf(alpha: f64, n: u64) -> Result<Zipf<f64>, WorkloadError> {
    if n < 1 || !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(WorkloadError::InvalidParams(format!("need n >= 1, alpha >= 0; got n={n} alpha={alpha}")));
    }
    Zipf::new(n as f64, alpha).map_err(|e| WorkloadError::InvalidParams(e.to_string()))
}

/// Draws one rank from `dist` using a caller-owned generator.
pub fn zipf_rank<R: Rng + ?Sized>(dist: &Zipf<f64>, rng: &mut R) -> u64 {
    dist.sample(rng) as u64
}

/// Generalized harmonic number `sum_{r=1}^{n} r^-alpha`.
pub fn harmonic(n: u64, alpha: f64) -> f64 {
    (1..=n).map(|r| (r as f64).powf(-alpha)).sum()
}

/// Seed for the named sub-stream `stream` at `index`, derived from `root`.
pub fn sub_seed(root: u64, stream: &str, index: u64) -> u64 {
    let mut z = root;
    for b in stream.bytes().chain(index.to_le_bytes()) {
        z = splitmix(z ^ b as u64);
    }
    splitmix(z)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn ba_small_cases() {
        let g = gen_ba(5, 1, 7).unwrap();
        assert_eq!(g.edges.len(), 4);
        // connected and acyclic on 5 nodes: a tree
        let mut parent: Vec<usize> = (0..5).collect();
        fn find(p: &mut Vec<usize>, x: usize) -> usize {
            if p[x] != x {
                let r = find(p, p[x]);
                p[x] = r;
            }
            p[x]
        }
        for (a, b) in &g.edges {
            let (ra, rb) = (find(&mut parent, *a as usize), find(&mut parent, *b as usize));
            assert_ne!(ra, rb, "cycle");
            parent[ra] = rb;
        }
        assert_eq!(g.edges[0], (1, 0));
        assert!(g.edges.iter().all(|(a, b)| a > b));
        assert_eq!(gen_ba(5, 1, 7).unwrap(), g);

        let k = gen_ba(4, 3, 1).unwrap();
        let pairs: BTreeSet<_> = k.edges.iter().copied().collect();
        assert_eq!(pairs.len(), 6);
        assert_eq!(k.degrees(), vec![3, 3, 3, 3]);
        assert!(gen_ba(3, 3, 1).is_err());
        assert!(gen_ba(3, 0, 1).is_err());
    }

    #[test]
    fn ba_orientation() {
        let b = gen_ba(50, 2, 3).unwrap();
        let g = b.to_graph(Orientation::NewToOld, |_| vec![]);
        assert_eq!(g.edge_count(), b.edges.len());
        assert!(g.nodes().all(|(id, _)| g.out_edges(id).count() <= 2));
        let both = b.to_graph(Orientation::Both, |_| vec![]);
        assert_eq!(both.edge_count(), 2 * b.edges.len());
    }

    #[test]
    fn ba_degree_tail() {
        let b = gen_ba(10_000, 3, 11).unwrap();
        let gamma = tail_exponent(&b.degrees(), 3);
        assert!((gamma - 3.0).abs() <= 0.5, "gamma {gamma}");
    }

    #[test]
    fn sub_seeds_are_distinct() {
        let seeds: BTreeSet<u64> = ["graph", "ops", "payload"]
            .iter()
            .flat_map(|s| (0..50).map(move |i| sub_seed(42, s, i)))
            .collect();
        assert_eq!(seeds.len(), 150);
        assert_eq!(sub_seed(42, "graph", 3), sub_seed(42, "graph", 3));
        assert_ne!(sub_seed(42, "graph", 3), sub_seed(43, "graph", 3));
    }

    #[test]
    fn zipf_two_ranks() {
        let mut s = ZipfSampler::new(1.0, 2, 5).unwrap();
        let n = 100_000;
        let ones = (0..n).filter(|_| s.sample() == 1).count();
        let p1 = 1.0 / (1.0 + 0.5);
        assert!((ones as f64 / n as f64 - p1).abs() < 0.02);
    }

    #[test]
    fn zipf_uniform_chi_square() {
        let n = 10u64;
        let draws = 50_000;
        let mut counts = vec![0u64; n as usize];
        let mut s = ZipfSampler::new(0.0, n, 9).unwrap();
        for _ in 0..draws {
            counts[(s.sample() - 1) as usize] += 1;
        }
        let e = draws as f64 / n as f64;
        let chi: f64 = counts.iter().map(|c| (*c as f64 - e).powi(2) / e).sum();
        // chi-square 0.99 quantile with 9 degrees of freedom
        assert!(chi < 21.666, "chi {chi}");
    }

    #[test]
    fn zipf_top_rank_matches_harmonic() {
        let mut s = ZipfSampler::new(1.2, 1000, 13).unwrap();
        let draws = 200_000;
        let top = (0..draws).filter(|_| s.sample() == 1).count() as f64 / draws as f64;
        let expect = 1.0 / harmonic(1000, 1.2);
        assert!((top - expect).abs() / expect < 0.10);
        assert!(ZipfSampler::new(-1.0, 10, 0).is_err());
        assert!(ZipfSampler::new(1.0, 0, 0).is_err());
    }
}
