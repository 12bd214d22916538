//! Best-first search with an `l_s`-bounded candidate pool.
//!
//! The pool holds the `l_s` closest nodes evaluated so far, expanded or not,
//! ordered by `(distance, id)`. Each iteration expands the closest
//! unexpanded entry; the search ends when every pool entry is expanded. A
//! node's distance is computed at most once per search. `hops` counts
//! expansions.

use std::ops::ControlFlow;

use rand::Rng;

use super::ProximityGraph;
use crate::dataset::VectorDataset;
use crate::distance::l2_sq;
use crate::error::{GateError, Result};
use crate::knn::{brute_force_neighbors, KnnResult, Neighbor};

/// Candidate pool width used when measuring hop counts to a target.
pub const HOP_COUNT_POOL: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub results: KnnResult,
    pub hops: usize,
    pub distance_evals: usize,
}

#[derive(Debug, Clone, Copy)]
struct PoolEntry {
    n: Neighbor,
    expanded: bool,
}

/// Reusable per-thread search state. Visited marks are epoch-stamped so a
/// new search costs nothing proportional to the graph size.
#[derive(Debug, Default)]
pub struct SearchScratch {
    stamps: Vec<u32>,
    epoch: u32,
    pool: Vec<PoolEntry>,
}

impl SearchScratch {
    pub fn new(node_count: usize) -> Self {
        Self { stamps: vec![0; node_count], epoch: 0, pool: Vec::new() }
    }

    fn reset(&mut self, node_count: usize) {
        if self.stamps.len() != node_count {
            self.stamps = vec![0; node_count];
            self.epoch = 0;
        }
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamps.iter_mut().for_each(|s| *s = 0);
            self.epoch = 1;
        }
        self.pool.clear();
    }

    /// Marks `id` seen; returns false if it already was.
    #[inline]
    fn mark(&mut self, id: u32) -> bool {
        let s = &mut self.stamps[id as usize];
        if *s == self.epoch {
            false
        } else {
            *s = self.epoch;
            true
        }
    }

    fn top(&self, k: usize) -> Vec<Neighbor> {
        self.pool.iter().take(k).map(|e| e.n).collect()
    }
}

pub(crate) struct CoreStats {
    pub hops: usize,
    pub evals: usize,
}

/// Inserts into the sorted pool; returns the insertion index or None when
/// the candidate does not make the cut.
#[inline]
fn pool_insert(pool: &mut Vec<PoolEntry>, l_s: usize, n: Neighbor) -> Option<usize> {
    if pool.len() >= l_s {
        if let Some(last) = pool.last() {
            if n >= last.n {
                return None;
            }
        }
    }
    let pos = pool.partition_point(|e| e.n < n);
    pool.insert(pos, PoolEntry { n, expanded: false });
    if pool.len() > l_s {
        pool.pop();
    }
    Some(pos)
}

/// Shared loop. `on_expand(id, hop)` runs as each node is popped for
/// expansion (1-based hop) and may stop the search. `seen` collects every
/// evaluated node.
#[allow(clippy::too_many_arguments)]
pub(crate) fn search_core(
    adjacency: &[Vec<u32>],
    dataset: &VectorDataset,
    q: &[f32],
    l_s: usize,
    entries: &[u32],
    scratch: &mut SearchScratch,
    mut on_expand: impl FnMut(u32, usize) -> ControlFlow<()>,
    mut seen: Option<&mut Vec<Neighbor>>,
) -> CoreStats {
    scratch.reset(adjacency.len());
    let mut evals = 0usize;
    for &e in entries {
        if scratch.mark(e) {
            let n = Neighbor::new(e, l2_sq(dataset.get(e as usize), q));
            evals += 1;
            if let Some(s) = seen.as_deref_mut() {
                s.push(n);
            }
            pool_insert(&mut scratch.pool, l_s, n);
        }
    }

    let mut hops = 0usize;
    let mut cursor = 0usize;
    while cursor < scratch.pool.len() {
        if scratch.pool[cursor].expanded {
            cursor += 1;
            continue;
        }
        scratch.pool[cursor].expanded = true;
        let p = scratch.pool[cursor].n.id;
        hops += 1;
        if on_expand(p, hops).is_break() {
            break;
        }
        let mut lowest = scratch.pool.len();
        for &v in &adjacency[p as usize] {
            if !scratch.mark(v) {
                continue;
            }
            let n = Neighbor::new(v, l2_sq(dataset.get(v as usize), q));
            evals += 1;
            if let Some(s) = seen.as_deref_mut() {
                s.push(n);
            }
            if let Some(pos) = pool_insert(&mut scratch.pool, l_s, n) {
                lowest = lowest.min(pos);
            }
        }
        cursor = if lowest <= cursor { lowest } else { cursor + 1 };
    }
    CoreStats { hops, evals }
}

fn validate(
    graph: &ProximityGraph,
    dataset: &VectorDataset,
    q: &[f32],
    l_s: usize,
    k: usize,
    entries: &[u32],
) -> Result<()> {
    dataset.check_query(q)?;
    if graph.node_count() != dataset.len() {
        return Err(GateError::invalid(format!(
            "graph has {} nodes but dataset has {} vectors",
            graph.node_count(),
            dataset.len()
        )));
    }
    if k == 0 || k > l_s {
        return Err(GateError::invalid(format!("need 1 <= k <= l_s, got k = {k}, l_s = {l_s}")));
    }
    if entries.is_empty() {
        return Err(GateError::invalid("entry list is empty"));
    }
    if let Some(e) = entries.iter().find(|&&e| e as usize >= graph.node_count()) {
        return Err(GateError::invalid(format!("entry id {e} out of range")));
    }
    Ok(())
}

/// Best-first search from explicit entry points.
pub fn greedy_search(
    graph: &ProximityGraph,
    dataset: &VectorDataset,
    q: &[f32],
    l_s: usize,
    k: usize,
    entries: &[u32],
) -> Result<SearchOutcome> {
    let mut scratch = SearchScratch::new(graph.node_count());
    greedy_search_with(graph, dataset, q, l_s, k, entries, &mut scratch)
}

pub fn greedy_search_with(
    graph: &ProximityGraph,
    dataset: &VectorDataset,
    q: &[f32],
    l_s: usize,
    k: usize,
    entries: &[u32],
    scratch: &mut SearchScratch,
) -> Result<SearchOutcome> {
    validate(graph, dataset, q, l_s, k, entries)?;
    let stats =
        search_core(graph.adjacency(), dataset, q, l_s, entries, scratch, |_, _| ControlFlow::Continue(()), None);
    Ok(SearchOutcome {
        results: KnnResult::from_sorted(&scratch.top(k)),
        hops: stats.hops,
        distance_evals: stats.evals,
    })
}

/// Like [`greedy_search`], also returning the ids in expansion order.
pub fn greedy_search_traced(
    graph: &ProximityGraph,
    dataset: &VectorDataset,
    q: &[f32],
    l_s: usize,
    k: usize,
    entries: &[u32],
) -> Result<(SearchOutcome, Vec<u32>)> {
    validate(graph, dataset, q, l_s, k, entries)?;
    let mut scratch = SearchScratch::new(graph.node_count());
    let mut trace = Vec::new();
    let stats = search_core(
        graph.adjacency(),
        dataset,
        q,
        l_s,
        entries,
        &mut scratch,
        |id, _| {
            trace.push(id);
            ControlFlow::Continue(())
        },
        None,
    );
    let outcome = SearchOutcome {
        results: KnnResult::from_sorted(&scratch.top(k)),
        hops: stats.hops,
        distance_evals: stats.evals,
    };
    Ok((outcome, trace))
}

/// Number of expansions, counting the one that pops `target`, of a search
/// from `entry`. `None` if the search ends or passes `hop_cap` first.
#[allow(clippy::too_many_arguments)]
pub fn hop_count_to_target(
    graph: &ProximityGraph,
    dataset: &VectorDataset,
    q: &[f32],
    entry: u32,
    target: u32,
    l_s: usize,
    hop_cap: usize,
    scratch: &mut SearchScratch,
) -> Option<usize> {
    let mut found = None;
    search_core(
        graph.adjacency(),
        dataset,
        q,
        l_s,
        &[entry],
        scratch,
        |id, hop| {
            if id == target {
                found = Some(hop);
                ControlFlow::Break(())
            } else if hop >= hop_cap {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        },
        None,
    );
    found
}

/// Hop count from `entry` to the exact top-1 of `q`, using a pool of
/// [`HOP_COUNT_POOL`] candidates.
pub fn hop_count_to_top1(
    graph: &ProximityGraph,
    dataset: &VectorDataset,
    q: &[f32],
    entry: u32,
    hop_cap: usize,
) -> Result<Option<usize>> {
    validate(graph, dataset, q, HOP_COUNT_POOL, 1, &[entry])?;
    let top1 = brute_force_neighbors(dataset, q, 1)?[0].id;
    let mut scratch = SearchScratch::new(graph.node_count());
    Ok(hop_count_to_target(graph, dataset, q, entry, top1, HOP_COUNT_POOL, hop_cap, &mut scratch))
}

/// `count` distinct uniformly random node ids (all nodes if fewer exist).
pub fn random_entries(node_count: usize, count: usize, rng: &mut impl Rng) -> Vec<u32> {
    rand::seq::index::sample(rng, node_count, count.min(node_count)).into_iter().map(|i| i as u32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knn::{brute_force_knn, recall_at_k};
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};
    use rand::SeedableRng;

    fn line(n: usize) -> VectorDataset {
        VectorDataset::new(1, (0..n).map(|i| i as f32).collect()).unwrap()
    }

    #[test]
    fn path_walk_hand_trace() {
        let g = ProximityGraph::path(4);
        let ds = line(4);
        let out = greedy_search(&g, &ds, &[3.0], 4, 1, &[0]).unwrap();
        assert_eq!(out.results.ids, vec![3]);
        assert_eq!(out.hops, 4);
        assert_eq!(hop_count_to_top1(&g, &ds, &[3.0], 0, 100).unwrap(), Some(4));
    }

    #[test]
    fn entry_at_top1() {
        let g = ProximityGraph::path(4);
        let ds = line(4);
        let (out, trace) = greedy_search_traced(&g, &ds, &[2.0], 4, 1, &[2]).unwrap();
        assert_eq!(trace[0], 2);
        assert_eq!(out.results.ids, vec![2]);
        assert_eq!(hop_count_to_top1(&g, &ds, &[2.0], 2, 100).unwrap(), Some(1));
    }

    #[test]
    fn hop_cap_and_unreachable() {
        let g = ProximityGraph::path(10);
        let ds = line(10);
        assert_eq!(hop_count_to_top1(&g, &ds, &[9.0], 0, 5).unwrap(), None);
        assert_eq!(hop_count_to_top1(&g, &ds, &[9.0], 0, 10).unwrap(), Some(10));
        let split = ProximityGraph::new(vec![vec![1], vec![0], vec![]], 1).unwrap();
        assert_eq!(hop_count_to_top1(&split, &line(3), &[2.0], 0, 100).unwrap(), None);
    }

    #[test]
    fn argument_errors() {
        let g = ProximityGraph::path(4);
        let ds = line(4);
        assert!(greedy_search(&g, &ds, &[0.0], 2, 3, &[0]).is_err());
        assert!(greedy_search(&g, &ds, &[0.0], 2, 1, &[]).is_err());
        assert!(greedy_search(&g, &ds, &[0.0], 2, 1, &[9]).is_err());
        assert!(greedy_search(&g, &ds, &[0.0, 1.0], 2, 1, &[0]).is_err());
    }

    #[test]
    fn complete_graph_is_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f32> = (0..50 * 8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ds = VectorDataset::new(8, data).unwrap();
        let g = ProximityGraph::complete(50);
        for _ in 0..20 {
            let q: Vec<f32> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let entry = rng.random_range(0..50u32);
            let out = greedy_search(&g, &ds, &q, 50, 1, &[entry]).unwrap();
            let truth = brute_force_knn(&ds, &q, 1).unwrap();
            assert_eq!(recall_at_k(&out.results, &truth, 1).unwrap(), 1.0);
        }
    }

    fn random_instance(seed: u64, n: usize, deg: usize) -> (VectorDataset, ProximityGraph, Vec<f32>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..n * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ds = VectorDataset::new(4, data).unwrap();
        let adjacency = (0..n)
            .map(|u| {
                let mut adj: Vec<u32> = random_entries(n, deg + 1, &mut rng);
                adj.retain(|&v| v as usize != u);
                adj.truncate(deg);
                adj
            })
            .collect();
        let g = ProximityGraph::new(adjacency, deg).unwrap();
        let q = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        (ds, g, q)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn recall_non_decreasing_in_pool(seed in any::<u64>()) {
            let (ds, g, q) = random_instance(seed, 120, 4);
            let truth = brute_force_knn(&ds, &q, 5).unwrap();
            let mut prev = 0.0;
            for l_s in [5usize, 8, 16, 32, 64, 120] {
                let out = greedy_search(&g, &ds, &q, l_s, 5, &[0]).unwrap();
                let r = recall_at_k(&out.results, &truth, 5).unwrap();
                prop_assert!(r >= prev);
                prev = r;
            }
        }

        #[test]
        fn deterministic_and_sorted(seed in any::<u64>()) {
            let (ds, g, q) = random_instance(seed, 80, 5);
            let a = greedy_search(&g, &ds, &q, 12, 6, &[3, 7]).unwrap();
            let b = greedy_search(&g, &ds, &q, 12, 6, &[3, 7]).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert!(a.results.dists.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(a.hops >= 1);
        }
    }
}
