//! Proximity graphs over dataset ids: exact kNN graphs, NSG-style pruned
//! graphs, and the shared best-first search.

mod knn_graph;
mod nsg;
mod search;

use std::collections::VecDeque;
use std::path::Path;

pub use knn_graph::build_knn_graph;
pub use nsg::{build_nsg, NsgBuild, NsgParams};
pub use search::{
    greedy_search, greedy_search_traced, greedy_search_with, hop_count_to_target, hop_count_to_top1, random_entries,
    SearchOutcome, SearchScratch, HOP_COUNT_POOL,
};

use crate::error::{GateError, Result};
use crate::io::{put_i32, read_file, to_i32, write_file, ByteReader};

pub(crate) const GRAPH_MAGIC: &[u8; 4] = b"PGRF";
pub(crate) const SNAPSHOT_VERSION: i32 = 1;

/// Directed adjacency lists over ids `0..node_count`.
///
/// Invariants: no self-loops, no duplicate neighbors, out-degree bounded by
/// `max_degree`, every neighbor id in range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProximityGraph {
    adjacency: Vec<Vec<u32>>,
    max_degree: usize,
}

impl ProximityGraph {
    pub fn new(adjacency: Vec<Vec<u32>>, max_degree: usize) -> Result<Self> {
        let g = Self { adjacency, max_degree };
        g.validate()?;
        Ok(g)
    }

    pub(crate) fn new_unchecked(adjacency: Vec<Vec<u32>>, max_degree: usize) -> Self {
        Self { adjacency, max_degree }
    }

    /// Undirected path `0 - 1 - ... - (n-1)`.
    pub fn path(n: usize) -> Self {
        let adjacency = (0..n)
            .map(|i| {
                let mut a = Vec::with_capacity(2);
                if i > 0 {
                    a.push(i as u32 - 1);
                }
                if i + 1 < n {
                    a.push(i as u32 + 1);
                }
                a
            })
            .collect();
        Self::new_unchecked(adjacency, 2.min(n.saturating_sub(1)))
    }

    /// Complete digraph without self-loops.
    pub fn complete(n: usize) -> Self {
        let adjacency = (0..n as u32).map(|i| (0..n as u32).filter(|&j| j != i).collect()).collect();
        Self::new_unchecked(adjacency, n.saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.adjacency.len();
        for (u, adj) in self.adjacency.iter().enumerate() {
            if adj.len() > self.max_degree {
                return Err(GateError::invalid(format!(
                    "node {u} has out-degree {} above bound {}",
                    adj.len(),
                    self.max_degree
                )));
            }
            let mut sorted = adj.clone();
            sorted.sort_unstable();
            for w in sorted.windows(2) {
                if w[0] == w[1] {
                    return Err(GateError::invalid(format!("node {u} lists neighbor {} twice", w[0])));
                }
            }
            for &v in adj {
                if v as usize >= n {
                    return Err(GateError::invalid(format!("node {u} links to out-of-range id {v}")));
                }
                if v as usize == u {
                    return Err(GateError::invalid(format!("node {u} has a self-loop")));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    #[inline]
    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    #[inline]
    pub fn neighbors(&self, u: usize) -> &[u32] {
        &self.adjacency[u]
    }

    pub fn adjacency(&self) -> &[Vec<u32>] {
        &self.adjacency
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }

    /// Smallest and largest out-degree over all nodes.
    pub fn degree_range(&self) -> (usize, usize) {
        let min = self.adjacency.iter().map(Vec::len).min().unwrap_or(0);
        let max = self.adjacency.iter().map(Vec::len).max().unwrap_or(0);
        (min, max)
    }

    pub fn has_edge(&self, u: usize, v: u32) -> bool {
        self.adjacency[u].contains(&v)
    }

    /// Reachability mask of a breadth-first traversal from `root`.
    pub fn reachable_from(&self, root: usize) -> Vec<bool> {
        let mut seen = vec![false; self.node_count()];
        if root >= seen.len() {
            return seen;
        }
        let mut queue = VecDeque::from([root]);
        seen[root] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &self.adjacency[u] {
                if !seen[v as usize] {
                    seen[v as usize] = true;
                    queue.push_back(v as usize);
                }
            }
        }
        seen
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.save_with_magic(path.as_ref(), GRAPH_MAGIC)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::load_with_magic(path.as_ref(), GRAPH_MAGIC)
    }

    pub(crate) fn to_bytes(&self, magic: &[u8; 4]) -> Result<Vec<u8>> {
        let mut buf = Vec::with_capacity(16 + 4 * (self.node_count() + self.edge_count()));
        buf.extend_from_slice(magic);
        put_i32(&mut buf, SNAPSHOT_VERSION);
        put_i32(&mut buf, to_i32(self.node_count(), "node count")?);
        put_i32(&mut buf, to_i32(self.max_degree, "max degree")?);
        for adj in &self.adjacency {
            put_i32(&mut buf, adj.len() as i32);
            for &v in adj {
                put_i32(&mut buf, v as i32);
            }
        }
        Ok(buf)
    }

    pub(crate) fn save_with_magic(&self, path: &Path, magic: &[u8; 4]) -> Result<()> {
        write_file(path, &self.to_bytes(magic)?)
    }

    pub(crate) fn load_with_magic(path: &Path, magic: &[u8; 4]) -> Result<Self> {
        let bytes = read_file(path)?;
        let mut r = ByteReader::new(path, &bytes);
        r.magic(magic)?;
        let at = r.offset();
        let version = r.i32("version")?;
        if version != SNAPSHOT_VERSION {
            return Err(GateError::format(path, at, format!("unsupported version {version}")));
        }
        let n = r.count("node count")?;
        let max_degree = r.count("max degree")?;
        let mut adjacency = Vec::with_capacity(n);
        for _ in 0..n {
            let at = r.offset();
            let deg = r.count("out-degree")?;
            if deg > max_degree {
                return Err(GateError::format(path, at, format!("out-degree {deg} above bound {max_degree}")));
            }
            let ids = r.i32s(deg, "neighbor ids")?;
            if let Some(bad) = ids.iter().find(|&&v| v < 0 || v as usize >= n) {
                return Err(GateError::format(path, at, format!("neighbor id {bad} out of range")));
            }
            adjacency.push(ids.into_iter().map(|v| v as u32).collect());
        }
        if !r.is_done() {
            return Err(r.err("trailing bytes after last node"));
        }
        Self::new(adjacency, max_degree).map_err(|e| GateError::format(path, 0, e.to_string()))
    }
}
