//! Hop-bounded guided-walk subgraphs around hub nodes and a
//! Weisfeiler-Lehman feature-hash embedding of them.

use std::collections::{HashMap, VecDeque};

use rayon::prelude::*;

use crate::dataset::VectorDataset;
use crate::distance::l2_sq;
use crate::error::{GateError, Result};
use crate::graph::ProximityGraph;
use crate::hubs::HubSet;
use crate::knn::Neighbor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledSubgraph {
    pub hub: u32,
    /// Discovery order; `nodes[0]` is the hub.
    pub nodes: Vec<u32>,
    /// `hop_of[i]` is the walk depth of `nodes[i]`.
    pub hop_of: Vec<usize>,
    /// Directed edges `(from, to)` in dataset ids, each present in the
    /// source graph.
    pub edges: Vec<(u32, u32)>,
}

impl SampledSubgraph {
    pub fn hop(&self, id: u32) -> Option<usize> {
        self.nodes.iter().position(|&n| n == id).map(|i| self.hop_of[i])
    }

    pub fn max_hop(&self) -> usize {
        self.hop_of.iter().copied().max().unwrap_or(0)
    }
}

/// `⌈min_deg / max_deg · deg⌉`, at least 1, by exact integer arithmetic.
pub fn budget_from(min_deg: usize, max_deg: usize, deg: usize) -> usize {
    if max_deg == 0 {
        return 1;
    }
    (min_deg * deg).div_ceil(max_deg).max(1)
}

/// Per-node sampling budget with degrees taken over the whole graph.
pub fn sample_budget(graph: &ProximityGraph, v: usize) -> Result<usize> {
    if v >= graph.node_count() {
        return Err(GateError::invalid(format!("node {v} out of range")));
    }
    let (min, max) = graph.degree_range();
    Ok(budget_from(min, max, graph.neighbors(v).len()))
}

/// `⌈x/2⌉` nearest and `⌊x/2⌋` farthest out-neighbors of `v`, ties broken by
/// smaller id; the far side draws only from neighbors not already taken.
fn pick_neighbors(graph: &ProximityGraph, dataset: &VectorDataset, v: u32, x: usize) -> Vec<u32> {
    let origin = dataset.get(v as usize);
    let mut by_dist: Vec<Neighbor> =
        graph.neighbors(v as usize).iter().map(|&u| Neighbor::new(u, l2_sq(origin, dataset.get(u as usize)))).collect();
    by_dist.sort_unstable();
    let x = x.min(by_dist.len());
    let near = x.div_ceil(2);
    let mut picked: Vec<u32> = by_dist[..near].iter().map(|n| n.id).collect();
    let mut rest = by_dist[near..].to_vec();
    rest.sort_unstable_by(|a, b| b.dist_sq.total_cmp(&a.dist_sq).then(a.id.cmp(&b.id)));
    picked.extend(rest.iter().take(x / 2).map(|n| n.id));
    picked
}

fn sample_with_range(
    graph: &ProximityGraph,
    dataset: &VectorDataset,
    hub: u32,
    h: usize,
    (min_deg, max_deg): (usize, usize),
) -> SampledSubgraph {
    let mut index: HashMap<u32, usize> = HashMap::from([(hub, 0)]);
    let mut sub = SampledSubgraph { hub, nodes: vec![hub], hop_of: vec![0], edges: Vec::new() };
    let mut queue = VecDeque::from([hub]);
    while let Some(v) = queue.pop_front() {
        let hop = sub.hop_of[index[&v]];
        if hop >= h {
            continue;
        }
        let x = budget_from(min_deg, max_deg, graph.neighbors(v as usize).len());
        for u in pick_neighbors(graph, dataset, v, x) {
            sub.edges.push((v, u));
            if let std::collections::hash_map::Entry::Vacant(e) = index.entry(u) {
                e.insert(sub.nodes.len());
                sub.nodes.push(u);
                sub.hop_of.push(hop + 1);
                queue.push_back(u);
            }
        }
    }
    sub
}

/// Breadth-first guided walk from `hub`. Nodes at depth `h` are kept but
/// not expanded, and every node is expanded at most once.
pub fn sample_subgraph(graph: &ProximityGraph, dataset: &VectorDataset, hub: u32, h: usize) -> Result<SampledSubgraph> {
    if hub as usize >= graph.node_count() {
        return Err(GateError::invalid(format!("hub {hub} out of range")));
    }
    if h == 0 {
        return Err(GateError::invalid("hop bound h must be at least 1"));
    }
    if graph.node_count() != dataset.len() {
        return Err(GateError::invalid("graph and dataset sizes differ"));
    }
    Ok(sample_with_range(graph, dataset, hub, h, graph.degree_range()))
}

/// Maps a sampled subgraph to a fixed-length feature vector. Implementations
/// must ignore node ids so isomorphic subgraphs embed identically.
pub trait SubgraphEmbedder: Sync {
    fn dim(&self) -> usize;
    fn embed(&self, sub: &SampledSubgraph) -> Vec<f32>;
}

/// Weisfeiler-Lehman relabeling on the undirected view, initial label =
/// out-degree inside the subgraph (capped at [`WlHashEmbedder::DEGREE_CAP`]),
/// every label of every round hashed into `d_u` signed buckets, then
/// L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WlHashEmbedder {
    pub d_u: usize,
    pub wl_iters: usize,
}

impl Default for WlHashEmbedder {
    fn default() -> Self {
        Self { d_u: 64, wl_iters: 3 }
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv_words(words: impl IntoIterator<Item = u64>) -> u64 {
    let mut h = FNV_OFFSET;
    for w in words {
        for b in w.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    // splitmix finalizer to spread low bits
    let mut z = h;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl WlHashEmbedder {
    pub const DEGREE_CAP: usize = 15;

    pub fn new(d_u: usize, wl_iters: usize) -> Result<Self> {
        if d_u == 0 {
            return Err(GateError::invalid("topology feature dimension must be positive"));
        }
        Ok(Self { d_u, wl_iters })
    }
}

impl SubgraphEmbedder for WlHashEmbedder {
    fn dim(&self) -> usize {
        self.d_u
    }

    fn embed(&self, sub: &SampledSubgraph) -> Vec<f32> {
        let n = sub.nodes.len();
        let local: HashMap<u32, usize> = sub.nodes.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut out_deg = vec![0usize; n];
        let mut undirected: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(a, b) in &sub.edges {
            let (a, b) = (local[&a], local[&b]);
            out_deg[a] += 1;
            if a != b {
                undirected[a].push(b);
                undirected[b].push(a);
            }
        }
        for adj in &mut undirected {
            adj.sort_unstable();
            adj.dedup();
        }

        let mut acc = vec![0f64; self.d_u];
        let mut add = |label: u64| {
            let bucket = (label % self.d_u as u64) as usize;
            let sign = if (label >> 63) & 1 == 0 { 1.0 } else { -1.0 };
            acc[bucket] += sign;
        };
        let mut labels: Vec<u64> = out_deg.iter().map(|&d| fnv_words([0, d.min(Self::DEGREE_CAP) as u64])).collect();
        labels.iter().for_each(|&l| add(l));
        let mut scratch = Vec::new();
        for round in 1..=self.wl_iters {
            let next: Vec<u64> = (0..n)
                .map(|i| {
                    scratch.clear();
                    scratch.extend(undirected[i].iter().map(|&j| labels[j]));
                    scratch.sort_unstable();
                    fnv_words([round as u64, labels[i]].into_iter().chain(scratch.iter().copied()))
                })
                .collect();
            labels = next;
            labels.iter().for_each(|&l| add(l));
        }

        let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // every contribution cancelled; fall back to a fixed unit vector
            let mut e = vec![0f32; self.d_u];
            e[0] = 1.0;
            return e;
        }
        acc.iter().map(|x| (x / norm) as f32).collect()
    }
}

/// Samples and embeds every hub's subgraph, in hub order.
pub fn topology_features(
    graph: &ProximityGraph,
    dataset: &VectorDataset,
    hubs: &HubSet,
    h: usize,
    embedder: &dyn SubgraphEmbedder,
) -> Result<VectorDataset> {
    if h == 0 {
        return Err(GateError::invalid("hop bound h must be at least 1"));
    }
    if let Some(&bad) = hubs.ids.iter().find(|&&id| id as usize >= graph.node_count()) {
        return Err(GateError::invalid(format!("hub {bad} out of range")));
    }
    if graph.node_count() != dataset.len() {
        return Err(GateError::invalid("graph and dataset sizes differ"));
    }
    let range = graph.degree_range();
    let rows: Vec<Vec<f32>> =
        hubs.ids.par_iter().map(|&hub| embedder.embed(&sample_with_range(graph, dataset, hub, h, range))).collect();
    VectorDataset::new(embedder.dim(), rows.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_formula() {
        assert_eq!(budget_from(2, 8, 4), 1);
        assert_eq!(budget_from(5, 5, 5), 5);
        assert_eq!(budget_from(3, 10, 7), 3);
        assert_eq!(budget_from(0, 10, 7), 1);
    }

    #[test]
    fn hash_is_order_sensitive() {
        assert_eq!(fnv_words([0, 1]), fnv_words([0, 1]));
        assert_ne!(fnv_words([0, 1]), fnv_words([1, 0]));
    }
}
