//! Hierarchical balanced k-means and per-cluster hub selection.
//!
//! Each level splits every current cluster into `k_branch` children with a
//! size-penalized k-means. A point's assignment cost for child `j` is
//! `‖x − μ_j‖² + λ·((s_j + 1 − t)² − (s_j − t)²)`, the increase of the
//! penalty `λ(s_j − t)²` caused by adding the point, where `s_j` is the
//! child's running size during the sweep and `t = |parent| / k_branch`.
//! After `⌈log_k n_c⌉` levels the leaves are merged down to exactly `n_c`.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::VectorDataset;
use crate::distance::l2_sq;
use crate::error::{GateError, Result};
use crate::io::{read_file, write_file};

/// Penalty weight: fixed, or derived per parent from its spread.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lambda {
    /// `(mean pairwise distance)² / (|parent| / k_branch)`.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HbkmParams {
    pub k_branch: usize,
    pub n_c: usize,
    pub lambda: Lambda,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for HbkmParams {
    fn default() -> Self {
        Self { k_branch: 8, n_c: 512, lambda: Lambda::Auto, max_iter: 10, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub n_c: usize,
    /// Cluster index of every dataset id.
    pub membership: Vec<u32>,
    /// Row `c` is the mean of cluster `c`.
    pub centroids: VectorDataset,
}

impl ClusterAssignment {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.n_c];
        for &c in &self.membership {
            s[c as usize] += 1;
        }
        s
    }

    /// Mean squared deviation of cluster sizes from `N / n_c`.
    pub fn size_variance(&self) -> f64 {
        let target = self.membership.len() as f64 / self.n_c as f64;
        let sizes = self.sizes();
        sizes.iter().map(|&s| (s as f64 - target).powi(2)).sum::<f64>() / self.n_c as f64
    }

    pub fn members(&self) -> Vec<Vec<u32>> {
        let mut m = vec![Vec::new(); self.n_c];
        for (id, &c) in self.membership.iter().enumerate() {
            m[c as usize].push(id as u32);
        }
        m
    }
}

/// Hub nodes in cluster order: `ids[c]` is the hub of cluster `cluster_of[c]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HubSet {
    pub ids: Vec<u32>,
    pub cluster_of: Vec<usize>,
}

impl HubSet {
    pub fn from_ids(ids: Vec<u32>) -> Result<Self> {
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(GateError::invalid("hub ids must be distinct"));
        }
        let cluster_of = (0..ids.len()).collect();
        Ok(Self { ids, cluster_of })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = format!("n_c={}\n", self.ids.len());
        for id in &self.ids {
            let _ = writeln!(s, "{id}");
        }
        write_file(path.as_ref(), s.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = read_file(path)?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| GateError::format(path, e.valid_up_to() as u64, "hub file is not UTF-8"))?;
        let mut offset = 0u64;
        let mut lines = text.split_inclusive('\n');
        let header = lines.next().unwrap_or("");
        let n_c: usize = header
            .trim()
            .strip_prefix("n_c=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| GateError::format(path, 0, "expected header line `n_c=<int>`"))?;
        offset += header.len() as u64;
        let mut ids = Vec::with_capacity(n_c);
        for line in lines {
            let t = line.trim();
            if !t.is_empty() {
                let id = t.parse::<u32>().map_err(|_| GateError::format(path, offset, format!("bad hub id {t:?}")))?;
                ids.push(id);
            }
            offset += line.len() as u64;
        }
        if ids.len() != n_c {
            return Err(GateError::format(
                path,
                offset,
                format!("header declares {n_c} hubs but {} ids follow", ids.len()),
            ));
        }
        Self::from_ids(ids).map_err(|e| GateError::format(path, 0, e.to_string()))
    }
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn centroid_of(dataset: &VectorDataset, ids: &[u32]) -> Vec<f32> {
    let mut acc = vec![0f64; dataset.dim()];
    for &i in ids {
        for (a, x) in acc.iter_mut().zip(dataset.get(i as usize)) {
            *a += *x as f64;
        }
    }
    let n = ids.len().max(1) as f64;
    acc.into_iter().map(|a| (a / n) as f32).collect()
}

/// Mean pairwise Euclidean distance, estimated from up to 512 random pairs.
fn mean_pairwise_distance(dataset: &VectorDataset, ids: &[u32], rng: &mut ChaCha8Rng) -> f64 {
    if ids.len() < 2 {
        return 0.0;
    }
    let pairs = 512;
    let mut sum = 0.0;
    for _ in 0..pairs {
        let a = rng.random_range(0..ids.len());
        let mut b = rng.random_range(0..ids.len() - 1);
        if b >= a {
            b += 1;
        }
        let (x, y) = (dataset.get(ids[a] as usize), dataset.get(ids[b] as usize));
        sum += (l2_sq(x, y) as f64).sqrt();
    }
    sum / pairs as f64
}

fn kmeans_pp(dataset: &VectorDataset, ids: &[u32], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f32>> {
    let mut centers = vec![dataset.get(ids[rng.random_range(0..ids.len())] as usize).to_vec()];
    let mut d2: Vec<f64> = ids.iter().map(|&i| l2_sq(dataset.get(i as usize), &centers[0]) as f64).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            let mut idx = d2.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    idx = i;
                    break;
                }
                r -= d;
            }
            idx
        } else {
            rng.random_range(0..ids.len())
        };
        let c = dataset.get(ids[pick] as usize).to_vec();
        for (d, &i) in d2.iter_mut().zip(ids) {
            *d = d.min(l2_sq(dataset.get(i as usize), &c) as f64);
        }
        centers.push(c);
    }
    centers
}

/// Splits `ids` into `min(k, |ids|)` non-empty children.
fn balanced_split(
    dataset: &VectorDataset,
    ids: &[u32],
    k: usize,
    lambda: Lambda,
    max_iter: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<u32>> {
    let k = k.min(ids.len());
    if k <= 1 {
        return vec![ids.to_vec()];
    }
    let target = ids.len() as f64 / k as f64;
    let lambda = match lambda {
        Lambda::Fixed(l) => l,
        Lambda::Auto => mean_pairwise_distance(dataset, ids, rng).powi(2) / target,
    };
    let mut centers = kmeans_pp(dataset, ids, k, rng);
    let mut assign = vec![usize::MAX; ids.len()];
    let mut order: Vec<usize> = (0..ids.len()).collect();
    for _ in 0..max_iter {
        order.shuffle(rng);
        let mut sizes = vec![0usize; k];
        let mut changed = false;
        for &p in &order {
            let x = dataset.get(ids[p] as usize);
            // exact cost ties go to the smaller child, then the lower index
            let mut best = (f64::INFINITY, 0usize);
            for (j, c) in centers.iter().enumerate() {
                let s = sizes[j] as f64 - target;
                let cost = l2_sq(x, c) as f64 + lambda * (2.0 * s + 1.0);
                if cost < best.0 || (cost == best.0 && sizes[j] < sizes[best.1]) {
                    best = (cost, j);
                }
            }
            sizes[best.1] += 1;
            if assign[p] != best.1 {
                assign[p] = best.1;
                changed = true;
            }
        }
        // an empty child takes the member of the largest child farthest
        // from that child's centroid
        while let Some(empty) = sizes.iter().position(|&s| s == 0) {
            let largest = (0..k).max_by_key(|&j| (sizes[j], std::cmp::Reverse(j))).unwrap_or(0);
            let far = (0..ids.len())
                .filter(|&p| assign[p] == largest)
                .max_by(|&a, &b| {
                    let da = l2_sq(dataset.get(ids[a] as usize), &centers[largest]);
                    let db = l2_sq(dataset.get(ids[b] as usize), &centers[largest]);
                    da.total_cmp(&db).then(b.cmp(&a))
                })
                .unwrap_or(0);
            assign[far] = empty;
            sizes[largest] -= 1;
            sizes[empty] += 1;
            changed = true;
        }
        let mut children = vec![Vec::new(); k];
        for (p, &j) in assign.iter().enumerate() {
            children[j].push(ids[p]);
        }
        for (c, ch) in centers.iter_mut().zip(&children) {
            *c = centroid_of(dataset, ch);
        }
        if !changed {
            break;
        }
    }
    let mut children = vec![Vec::new(); k];
    for (p, &j) in assign.iter().enumerate() {
        children[j].push(ids[p]);
    }
    children
}

/// Smallest `L` with `k^L >= n`.
fn levels_for(k: usize, n: usize) -> usize {
    let mut levels = 0;
    let mut leaves = 1usize;
    while leaves < n {
        leaves = leaves.saturating_mul(k);
        levels += 1;
    }
    levels
}

pub fn hbkm(dataset: &VectorDataset, params: &HbkmParams) -> Result<ClusterAssignment> {
    let n = dataset.len();
    if params.n_c == 0 || params.n_c > n {
        return Err(GateError::invalid(format!("target cluster count {} must lie in 1..={n}", params.n_c)));
    }
    if params.k_branch < 2 {
        return Err(GateError::invalid("branching factor must be at least 2"));
    }
    if params.max_iter == 0 {
        return Err(GateError::invalid("iteration count must be at least 1"));
    }
    if let Lambda::Fixed(l) = params.lambda {
        if !(l >= 0.0 && l.is_finite()) {
            return Err(GateError::invalid(format!("penalty weight {l} must be finite and >= 0")));
        }
    }

    // (members, parent index) per leaf
    let mut leaves: Vec<(Vec<u32>, usize)> = vec![((0..n as u32).collect(), 0)];
    for level in 0..levels_for(params.k_branch, params.n_c) {
        leaves = leaves
            .par_iter()
            .enumerate()
            .map(|(idx, (ids, _))| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix(params.seed ^ mix(((level as u64) << 32) | idx as u64)));
                balanced_split(dataset, ids, params.k_branch, params.lambda, params.max_iter, &mut rng)
                    .into_iter()
                    .map(|ch| (ch, idx))
                    .collect::<Vec<_>>()
            })
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect();
    }
    let mut centroids: Vec<Vec<f32>> = leaves.iter().map(|(ids, _)| centroid_of(dataset, ids)).collect();

    // merge the smallest leaf into its nearest sibling (nearest leaf overall
    // when it has no sibling left) until n_c remain
    while leaves.len() > params.n_c {
        let small = (0..leaves.len()).min_by_key(|&i| (leaves[i].0.len(), i)).unwrap_or(0);
        let parent = leaves[small].1;
        let nearest = |same_parent: bool| {
            (0..leaves.len()).filter(|&j| j != small && (!same_parent || leaves[j].1 == parent)).min_by(|&a, &b| {
                l2_sq(&centroids[small], &centroids[a])
                    .total_cmp(&l2_sq(&centroids[small], &centroids[b]))
                    .then(a.cmp(&b))
            })
        };
        let into = nearest(true)
            .or_else(|| nearest(false))
            .ok_or_else(|| GateError::Internal("no leaf available to merge into".into()))?;
        let (moved, _) = leaves.remove(small);
        centroids.remove(small);
        let into = if into > small { into - 1 } else { into };
        leaves[into].0.extend(moved);
        leaves[into].0.sort_unstable();
        centroids[into] = centroid_of(dataset, &leaves[into].0);
    }

    let mut membership = vec![0u32; n];
    for (c, (ids, _)) in leaves.iter().enumerate() {
        for &i in ids {
            membership[i as usize] = c as u32;
        }
    }
    let flat: Vec<f32> = centroids.into_iter().flatten().collect();
    Ok(ClusterAssignment { n_c: leaves.len(), membership, centroids: VectorDataset::new(dataset.dim(), flat)? })
}

/// One hub per cluster: the member nearest its centroid, smaller id on ties.
pub fn extract_hub_nodes(dataset: &VectorDataset, assignment: &ClusterAssignment) -> Result<HubSet> {
    if assignment.membership.len() != dataset.len() {
        return Err(GateError::invalid(format!(
            "assignment covers {} ids but dataset has {}",
            assignment.membership.len(),
            dataset.len()
        )));
    }
    let mut best: Vec<Option<(f32, u32)>> = vec![None; assignment.n_c];
    for (id, &c) in assignment.membership.iter().enumerate() {
        let d = l2_sq(dataset.get(id), assignment.centroids.get(c as usize));
        let slot = &mut best[c as usize];
        if slot.is_none_or(|(bd, _)| d < bd) {
            *slot = Some((d, id as u32));
        }
    }
    let ids = best
        .into_iter()
        .enumerate()
        .map(|(c, b)| b.map(|(_, id)| id).ok_or_else(|| GateError::Internal(format!("cluster {c} is empty"))))
        .collect::<Result<Vec<_>>>()?;
    HubSet::from_ids(ids)
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(GateError::invalid("labelings differ in length"));
    }
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![0u64; ka * kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
    }
    let c2 = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
    let sum_ij: f64 = table.iter().map(|&v| c2(v)).sum();
    let sum_a: f64 = (0..ka).map(|i| c2(table[i * kb..(i + 1) * kb].iter().sum())).sum();
    let sum_b: f64 = (0..kb).map(|j| c2((0..ka).map(|i| table[i * kb + j]).sum())).sum();
    let expected = sum_a * sum_b / c2(n as u64).max(1.0);
    let max = 0.5 * (sum_a + sum_b);
    if (max - expected).abs() < f64::EPSILON {
        return Ok(1.0);
    }
    Ok((sum_ij - expected) / (max - expected))
}
