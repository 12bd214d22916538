//! NSG-style graph construction.
//!
//! 1. For every node `u`, search the kNN graph from the medoid with `u` as
//!    the query and pool every evaluated node together with `u`'s kNN list.
//! 2. Keep at most `C` pooled candidates, sorted by distance to `u`, and
//!    select edges with the occlusion rule: `v` is kept unless an already
//!    kept `w` satisfies `δ(w, v) < δ(u, v)`; stop at `R` edges.
//! 3. Add reverse edges and re-run the selection over each node's union of
//!    forward and reverse candidates.
//! 4. Traverse from the medoid; each unreachable node receives one edge from
//!    its nearest reachable node that still has degree headroom.

use std::collections::VecDeque;
use std::ops::ControlFlow;

use rayon::prelude::*;

use super::search::{search_core, SearchScratch};
use super::ProximityGraph;
use crate::dataset::VectorDataset;
use crate::distance::l2_sq;
use crate::error::{GateError, Result};
use crate::knn::Neighbor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NsgParams {
    /// Candidate pool width of the construction search.
    pub l_build: usize,
    /// Out-degree bound.
    pub r_deg: usize,
    /// Maximum number of candidates considered by the pruning pass.
    pub c_pool: usize,
}

impl Default for NsgParams {
    fn default() -> Self {
        Self { l_build: 50, r_deg: 50, c_pool: 512 }
    }
}

#[derive(Debug, Clone)]
pub struct NsgBuild {
    pub graph: ProximityGraph,
    pub medoid: u32,
    /// Edges added by the connectivity pass; these bypass the occlusion rule.
    pub repair_edges: Vec<(u32, u32)>,
}

/// Occlusion-rule selection over `candidates`, which must be sorted by
/// `(distance to u, id)` and exclude `u`.
pub(crate) fn occlusion_prune(dataset: &VectorDataset, candidates: &[Neighbor], r_deg: usize) -> Vec<Neighbor> {
    let mut kept: Vec<Neighbor> = Vec::with_capacity(r_deg);
    for c in candidates {
        if kept.len() >= r_deg {
            break;
        }
        let cv = dataset.get(c.id as usize);
        let occluded = kept.iter().any(|w| l2_sq(dataset.get(w.id as usize), cv) < c.dist_sq);
        if !occluded {
            kept.push(*c);
        }
    }
    kept
}

fn sort_dedup(c: &mut Vec<Neighbor>) {
    c.sort_unstable();
    c.dedup_by_key(|n| n.id);
}

pub fn build_nsg(dataset: &VectorDataset, knn_graph: &ProximityGraph, params: NsgParams) -> Result<NsgBuild> {
    let n = dataset.len();
    let medoid =
        dataset.medoid().ok_or_else(|| GateError::invalid("cannot build a graph over an empty dataset"))? as u32;
    if knn_graph.node_count() != n {
        return Err(GateError::invalid(format!("kNN graph has {} nodes but dataset has {n}", knn_graph.node_count())));
    }
    if params.r_deg == 0 || params.l_build == 0 || params.c_pool == 0 {
        return Err(GateError::invalid("NSG parameters L, R and C must be positive"));
    }

    // forward selection
    let forward: Vec<Vec<Neighbor>> = (0..n)
        .into_par_iter()
        .map_init(
            || (SearchScratch::new(n), Vec::new()),
            |(scratch, seen), u| {
                seen.clear();
                let q = dataset.get(u);
                search_core(
                    knn_graph.adjacency(),
                    dataset,
                    q,
                    params.l_build,
                    &[medoid],
                    scratch,
                    |_, _| ControlFlow::Continue(()),
                    Some(seen),
                );
                let mut cands: Vec<Neighbor> = seen.iter().copied().filter(|c| c.id as usize != u).collect();
                for &v in knn_graph.neighbors(u) {
                    cands.push(Neighbor::new(v, l2_sq(q, dataset.get(v as usize))));
                }
                sort_dedup(&mut cands);
                cands.truncate(params.c_pool);
                occlusion_prune(dataset, &cands, params.r_deg)
            },
        )
        .collect();

    // reverse candidates
    let mut reverse: Vec<Vec<Neighbor>> = vec![Vec::new(); n];
    for (u, kept) in forward.iter().enumerate() {
        for c in kept {
            reverse[c.id as usize].push(Neighbor::new(u as u32, c.dist_sq));
        }
    }
    let mut adjacency: Vec<Vec<u32>> = forward
        .into_par_iter()
        .zip(reverse.into_par_iter())
        .map(|(mut cands, rev)| {
            cands.extend(rev);
            sort_dedup(&mut cands);
            cands.truncate(params.c_pool);
            occlusion_prune(dataset, &cands, params.r_deg).into_iter().map(|c| c.id).collect()
        })
        .collect();

    let repair_edges = repair_connectivity(dataset, &mut adjacency, medoid, params)?;
    let graph = ProximityGraph::new_unchecked(adjacency, params.r_deg);
    debug_assert!(graph.validate().is_ok());
    Ok(NsgBuild { graph, medoid, repair_edges })
}

fn mark_reachable(adjacency: &[Vec<u32>], from: usize, reach: &mut [bool]) {
    if reach[from] {
        return;
    }
    reach[from] = true;
    let mut queue = VecDeque::from([from]);
    while let Some(u) = queue.pop_front() {
        for &v in &adjacency[u] {
            if !reach[v as usize] {
                reach[v as usize] = true;
                queue.push_back(v as usize);
            }
        }
    }
}

fn repair_connectivity(
    dataset: &VectorDataset,
    adjacency: &mut [Vec<u32>],
    medoid: u32,
    params: NsgParams,
) -> Result<Vec<(u32, u32)>> {
    let n = adjacency.len();
    let mut reach = vec![false; n];
    mark_reachable(adjacency, medoid as usize, &mut reach);
    let mut repairs = Vec::new();
    let mut scratch = SearchScratch::new(n);
    let mut seen = Vec::new();
    for x in 0..n {
        if reach[x] {
            continue;
        }
        let q = dataset.get(x);
        // nearest reachable node with headroom among those met by a search
        // over the current graph, else by exhaustive scan
        seen.clear();
        search_core(
            adjacency,
            dataset,
            q,
            params.l_build,
            &[medoid],
            &mut scratch,
            |_, _| ControlFlow::Continue(()),
            Some(&mut seen),
        );
        let has_room = |w: u32| reach[w as usize] && adjacency[w as usize].len() < params.r_deg;
        let mut best = seen.iter().copied().filter(|c| has_room(c.id)).min();
        if best.is_none() {
            best = (0..n as u32)
                .filter(|&w| has_room(w))
                .map(|w| Neighbor::new(w, l2_sq(q, dataset.get(w as usize))))
                .min();
        }
        let w = best.ok_or_else(|| GateError::Internal("no reachable node has degree headroom".into()))?.id;
        adjacency[w as usize].push(x as u32);
        repairs.push((w, x as u32));
        mark_reachable(adjacency, x, &mut reach);
    }
    Ok(repairs)
}
