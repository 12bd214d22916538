//! Exact nearest-neighbor search and the recall metric.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use rayon::prelude::*;

use crate::dataset::VectorDataset;
use crate::distance::l2_sq;
use crate::error::{GateError, Result};

/// A candidate with its squared distance. Orders by distance, then id, so
/// equal distances resolve toward the smaller id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: u32,
    pub dist_sq: f32,
}

impl Neighbor {
    #[inline]
    pub fn new(id: u32, dist_sq: f32) -> Self {
        Self { id, dist_sq }
    }
}

impl Eq for Neighbor {}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist_sq.total_cmp(&other.dist_sq).then_with(|| self.id.cmp(&other.id))
    }
}

/// Ordered result list: `dists` are Euclidean distances, non-decreasing.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KnnResult {
    pub ids: Vec<u32>,
    pub dists: Vec<f32>,
}

impl KnnResult {
    pub fn from_sorted(neighbors: &[Neighbor]) -> Self {
        Self {
            ids: neighbors.iter().map(|n| n.id).collect(),
            dists: neighbors.iter().map(|n| n.dist_sq.sqrt()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Keeps the `k` smallest neighbors seen so far.
pub(crate) struct TopK {
    k: usize,
    heap: BinaryHeap<Neighbor>,
}

impl TopK {
    pub(crate) fn new(k: usize) -> Self {
        Self { k, heap: BinaryHeap::with_capacity(k + 1) }
    }

    #[inline]
    pub(crate) fn push(&mut self, n: Neighbor) {
        if self.heap.len() < self.k {
            self.heap.push(n);
        } else if let Some(top) = self.heap.peek() {
            if n < *top {
                self.heap.pop();
                self.heap.push(n);
            }
        }
    }

    pub(crate) fn into_sorted(self) -> Vec<Neighbor> {
        self.heap.into_sorted_vec()
    }
}

/// Exact `k` nearest ids of `q`, ties broken by smaller id.
pub fn brute_force_knn(dataset: &VectorDataset, q: &[f32], k: usize) -> Result<KnnResult> {
    Ok(KnnResult::from_sorted(&brute_force_neighbors(dataset, q, k)?))
}

pub(crate) fn brute_force_neighbors(dataset: &VectorDataset, q: &[f32], k: usize) -> Result<Vec<Neighbor>> {
    dataset.check_query(q)?;
    if k == 0 {
        return Err(GateError::invalid("k must be positive"));
    }
    if k > dataset.len() {
        return Err(GateError::invalid(format!("k = {k} exceeds dataset size {}", dataset.len())));
    }
    let mut top = TopK::new(k);
    for (i, v) in dataset.iter().enumerate() {
        top.push(Neighbor::new(i as u32, l2_sq(v, q)));
    }
    Ok(top.into_sorted())
}

/// Exact kNN for every query, computed in parallel.
pub fn brute_force_knn_batch(dataset: &VectorDataset, queries: &VectorDataset, k: usize) -> Result<Vec<KnnResult>> {
    dataset.check_compatible(queries)?;
    (0..queries.len()).into_par_iter().map(|i| brute_force_knn(dataset, queries.get(i), k)).collect()
}

/// `|returned ∩ truth| / k` over the first `k` truth ids.
pub fn recall_at_k(returned: &KnnResult, truth: &KnnResult, k: usize) -> Result<f64> {
    recall_ids(&returned.ids, &truth.ids, k)
}

pub fn recall_ids(returned: &[u32], truth: &[u32], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(GateError::invalid("k must be positive"));
    }
    if truth.len() < k {
        return Err(GateError::invalid(format!("truth has {} ids but k = {k}", truth.len())));
    }
    let truth: HashSet<u32> = truth[..k].iter().copied().collect();
    let returned: HashSet<u32> = returned.iter().take(k).copied().collect();
    Ok(returned.intersection(&truth).count() as f64 / k as f64)
}
