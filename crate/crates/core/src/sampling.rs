//! Per-hub positive and negative historical queries mined from greedy-search
//! hop counts.
//!
//! `H(q, v)` is the number of expansions a search from hub `v` needs before
//! it pops the exact top-1 of `q`. For each hub, with `m` the smallest `H`
//! over the queries it reaches within the cap, queries with `H ≤ m + t_pos`
//! are positive and queries with `H ≥ m + t_neg` negative.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::dataset::VectorDataset;
use crate::error::{GateError, Result};
use crate::graph::{hop_count_to_target, ProximityGraph, SearchScratch, HOP_COUNT_POOL};
use crate::hubs::HubSet;
use crate::io::{read_file, write_file};
use crate::knn::brute_force_knn;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleParams {
    pub t_pos: usize,
    pub t_neg: usize,
    pub hop_cap: usize,
    pub max_queue: usize,
}

impl Default for SampleParams {
    fn default() -> Self {
        Self { t_pos: 3, t_neg: 15, hop_cap: 2000, max_queue: 64 }
    }
}

/// `(query id, hop count)`.
pub type Sample = (u32, u32);

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HubQueue {
    pub positives: Vec<Sample>,
    pub negatives: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleQueues {
    pub t_pos: usize,
    pub t_neg: usize,
    /// One entry per hub, in hub order.
    pub hubs: Vec<u32>,
    pub queues: Vec<HubQueue>,
    /// Hub indices that reached no query's top-1 within the cap.
    pub unreachable_hubs: Vec<usize>,
}

/// Exact top-1 id of every query.
pub fn query_top1(dataset: &VectorDataset, queries: &VectorDataset) -> Result<Vec<u32>> {
    dataset.check_compatible(queries)?;
    (0..queries.len()).into_par_iter().map(|i| Ok(brute_force_knn(dataset, queries.get(i), 1)?.ids[0])).collect()
}

/// Hop matrix `H[q][hub]`, `None` where the top-1 was not reached.
pub fn hop_matrix(
    graph: &ProximityGraph,
    dataset: &VectorDataset,
    hubs: &HubSet,
    queries: &VectorDataset,
    top1: &[u32],
    hop_cap: usize,
) -> Vec<Vec<Option<u32>>> {
    (0..queries.len())
        .into_par_iter()
        .map_init(
            || SearchScratch::new(graph.node_count()),
            |scratch, qi| {
                let q = queries.get(qi);
                hubs.ids
                    .iter()
                    .map(|&hub| {
                        hop_count_to_target(graph, dataset, q, hub, top1[qi], HOP_COUNT_POOL, hop_cap, scratch)
                            .map(|h| h as u32)
                    })
                    .collect()
            },
        )
        .collect()
}

/// Thresholds one hub's column of hop counts into its queues.
pub fn classify(column: &[Option<u32>], params: &SampleParams) -> Option<HubQueue> {
    let m = column.iter().flatten().copied().min()? as usize;
    let mut queue = HubQueue::default();
    for (qi, h) in column.iter().enumerate() {
        let Some(h) = *h else { continue };
        if h as usize <= m + params.t_pos {
            queue.positives.push((qi as u32, h));
        } else if h as usize >= m + params.t_neg {
            queue.negatives.push((qi as u32, h));
        }
    }
    // positives keep the smallest hop counts, negatives the largest; equal
    // hop counts keep the smaller query id
    queue.positives.sort_by_key(|&(q, h)| (h, q));
    queue.negatives.sort_by_key(|&(q, h)| (std::cmp::Reverse(h), q));
    queue.positives.truncate(params.max_queue);
    queue.negatives.truncate(params.max_queue);
    Some(queue)
}

fn check_params(params: &SampleParams) -> Result<()> {
    if params.t_pos >= params.t_neg {
        return Err(GateError::invalid(format!("t_pos ({}) must be below t_neg ({})", params.t_pos, params.t_neg)));
    }
    if params.hop_cap == 0 || params.max_queue == 0 {
        return Err(GateError::invalid("hop cap and queue bound must be positive"));
    }
    Ok(())
}

pub fn generate_samples(
    graph: &ProximityGraph,
    dataset: &VectorDataset,
    hubs: &HubSet,
    queries: &VectorDataset,
    params: &SampleParams,
) -> Result<SampleQueues> {
    check_params(params)?;
    if queries.is_empty() {
        return Err(GateError::invalid("no historical queries to mine"));
    }
    if graph.node_count() != dataset.len() {
        return Err(GateError::invalid("graph and dataset sizes differ"));
    }
    if let Some(&bad) = hubs.ids.iter().find(|&&id| id as usize >= graph.node_count()) {
        return Err(GateError::invalid(format!("hub {bad} out of range")));
    }
    let top1 = query_top1(dataset, queries)?;
    let matrix = hop_matrix(graph, dataset, hubs, queries, &top1, params.hop_cap);

    let mut queues = Vec::with_capacity(hubs.len());
    let mut unreachable = Vec::new();
    let mut column = vec![None; queries.len()];
    for (hi, &hub) in hubs.ids.iter().enumerate() {
        for (c, row) in column.iter_mut().zip(&matrix) {
            *c = row[hi];
        }
        match classify(&column, params) {
            Some(q) => queues.push(q),
            None => {
                log::warn!("hub {hub} reaches no query's top-1 within {} hops; its queues are empty", params.hop_cap);
                unreachable.push(hi);
                queues.push(HubQueue::default());
            }
        }
    }
    Ok(SampleQueues {
        t_pos: params.t_pos,
        t_neg: params.t_neg,
        hubs: hubs.ids.clone(),
        queues,
        unreachable_hubs: unreachable,
    })
}

impl SampleQueues {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = format!("t_pos {}\nt_neg {}\n", self.t_pos, self.t_neg);
        for (hub, q) in self.hubs.iter().zip(&self.queues) {
            let _ = writeln!(s, "hub {hub}");
            for (id, h) in &q.positives {
                let _ = writeln!(s, "+ {id} {h}");
            }
            for (id, h) in &q.negatives {
                let _ = writeln!(s, "- {id} {h}");
            }
        }
        write_file(path.as_ref(), s.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = read_file(path)?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| GateError::format(path, e.valid_up_to() as u64, "sample file is not UTF-8"))?;
        let mut out =
            SampleQueues { t_pos: 0, t_neg: 0, hubs: Vec::new(), queues: Vec::new(), unreachable_hubs: Vec::new() };
        let mut offset = 0u64;
        for line in text.split_inclusive('\n') {
            let at = offset;
            offset += line.len() as u64;
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = || GateError::format(path, at, format!("malformed line {:?}", line.trim_end()));
            let num = |s: &str| s.parse::<u32>().map_err(|_| bad());
            match parts.as_slice() {
                [] => {}
                ["t_pos", v] => out.t_pos = num(v)? as usize,
                ["t_neg", v] => out.t_neg = num(v)? as usize,
                ["hub", id] => {
                    out.hubs.push(num(id)?);
                    out.queues.push(HubQueue::default());
                }
                [sign @ ("+" | "-"), q, h] => {
                    let entry = (num(q)?, num(h)?);
                    let queue = out
                        .queues
                        .last_mut()
                        .ok_or_else(|| GateError::format(path, at, "sample line before any `hub` header"))?;
                    if *sign == "+" {
                        queue.positives.push(entry);
                    } else {
                        queue.negatives.push(entry);
                    }
                }
                _ => return Err(bad()),
            }
        }
        out.unreachable_hubs = out
            .queues
            .iter()
            .enumerate()
            .filter(|(_, q)| q.positives.is_empty() && q.negatives.is_empty())
            .map(|(i, _)| i)
            .collect();
        Ok(out)
    }

    pub fn total_positives(&self) -> usize {
        self.queues.iter().map(|q| q.positives.len()).sum()
    }

    pub fn total_negatives(&self) -> usize {
        self.queues.iter().map(|q| q.negatives.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classify_thresholds_and_truncation() {
        let col = vec![Some(4), Some(5), None, Some(30), Some(19), Some(7), Some(18)];
        let p = SampleParams { t_pos: 3, t_neg: 15, hop_cap: 100, max_queue: 64 };
        let q = classify(&col, &p).unwrap();
        assert_eq!(q.positives, vec![(0, 4), (1, 5), (5, 7)]);
        assert_eq!(q.negatives, vec![(3, 30), (4, 19)]);
        let q = classify(&col, &SampleParams { max_queue: 1, ..p }).unwrap();
        assert_eq!(q.positives, vec![(0, 4)]);
        assert_eq!(q.negatives, vec![(3, 30)]);
        assert!(classify(&[None, None], &p).is_none());
    }

    #[test]
    fn bad_thresholds_rejected() {
        assert!(check_params(&SampleParams { t_pos: 5, t_neg: 5, ..Default::default() }).is_err());
    }
}
