use rayon::prelude::*;

use super::ProximityGraph;
use crate::dataset::VectorDataset;
use crate::distance::l2_sq;
use crate::error::{GateError, Result};
use crate::knn::{Neighbor, TopK};

/// Exact K-nearest-neighbor graph by brute force. Each adjacency list is
/// sorted by `(distance, id)` and never contains the node itself.
pub fn build_knn_graph(dataset: &VectorDataset, k: usize) -> Result<ProximityGraph> {
    let n = dataset.len();
    if k == 0 || k >= n {
        return Err(GateError::invalid(format!("kNN degree {k} must satisfy 1 <= K < {n}")));
    }
    let adjacency: Vec<Vec<u32>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = dataset.get(i);
            let mut top = TopK::new(k);
            for (j, y) in dataset.iter().enumerate() {
                if j != i {
                    top.push(Neighbor::new(j as u32, l2_sq(x, y)));
                }
            }
            top.into_sorted().into_iter().map(|nb| nb.id).collect()
        })
        .collect();
    Ok(ProximityGraph::new_unchecked(adjacency, k))
}
