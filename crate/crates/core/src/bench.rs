//! Entry-strategy benchmark: recall, hop counts, distance evaluations and
//! single-thread throughput across a sweep of candidate-pool widths.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::VectorDataset;
use crate::error::{GateError, Result};
use crate::graph::{greedy_search_with, random_entries, ProximityGraph, SearchScratch};
use crate::knn::{brute_force_knn, recall_ids, KnnResult};
use crate::navigation::GateIndex;

pub const CSV_HEADER: &str = "strategy,l_s,k,recall,mean_hops,median_hops,dist_evals,qps,n_queries";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Strategy {
    /// `l_s` uniformly random seeds per query.
    Random,
    /// The dataset medoid as the single seed.
    Medoid,
    /// Learned routing through the hub navigation graph.
    Gate,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Random, Strategy::Medoid, Strategy::Gate];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Medoid => "medoid",
            Strategy::Gate => "gate",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = GateError;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| GateError::Config(format!("unknown strategy {s:?}; expected random, medoid or gate")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub strategy: Strategy,
    pub l_s: usize,
    pub k: usize,
    pub recall: f64,
    pub mean_hops: f64,
    pub median_hops: f64,
    pub dist_evals: f64,
    pub qps: f64,
    pub n_queries: usize,
}

/// One row per strategy and pool width, plus the returned ids behind every
/// recall figure.
#[derive(Debug, Clone, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// `results[i][q]` holds the ids returned for query `q` in row `i`.
    pub results: Vec<Vec<Vec<u32>>>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{:.6},{:.3},{:.1},{:.2},{:.1},{}",
                r.strategy, r.l_s, r.k, r.recall, r.mean_hops, r.median_hops, r.dist_evals, r.qps, r.n_queries
            );
        }
        s
    }

    /// Smallest-`l_s` row of `strategy` whose recall reaches `target`.
    pub fn matched(&self, strategy: Strategy, target: f64) -> Option<&BenchRow> {
        self.rows.iter().filter(|r| r.strategy == strategy && r.recall >= target).min_by_key(|r| r.l_s)
    }

    /// `1 − hops(ours) / hops(baseline)` at the matched operating points.
    pub fn hop_reduction(&self, ours: Strategy, baseline: Strategy, target: f64) -> Option<f64> {
        let a = self.matched(ours, target)?;
        let b = self.matched(baseline, target)?;
        Some(1.0 - a.mean_hops / b.mean_hops)
    }
}

pub struct BenchInputs<'a> {
    pub dataset: &'a VectorDataset,
    pub graph: &'a ProximityGraph,
    pub medoid: u32,
    pub index: Option<&'a GateIndex>,
    pub queries: &'a VectorDataset,
    /// Exact neighbor ids per query, at least `k` each.
    pub truth: &'a [Vec<u32>],
}

/// Exact `k` nearest neighbors of every query.
pub fn compute_ground_truth(dataset: &VectorDataset, queries: &VectorDataset, k: usize) -> Result<Vec<KnnResult>> {
    dataset.check_compatible(queries)?;
    (0..queries.len()).into_par_iter().map(|i| brute_force_knn(dataset, queries.get(i), k)).collect()
}

fn median(v: &mut [usize]) -> f64 {
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    }
}

/// Runs every strategy at every `l_s`. Queries execute one at a time on the
/// calling thread; the random strategy reseeds per row so rows do not depend
/// on the sweep.
pub fn run_bench(
    inputs: &BenchInputs<'_>,
    strategies: &[Strategy],
    ls_sweep: &[usize],
    k: usize,
    seed: u64,
) -> Result<BenchReport> {
    let n = inputs.queries.len();
    if n == 0 {
        return Err(GateError::invalid("no evaluation queries"));
    }
    if inputs.truth.len() != n || inputs.truth.iter().any(|t| t.len() < k) {
        return Err(GateError::invalid(format!("ground truth must hold {k} ids for each of {n} queries")));
    }
    if inputs.graph.node_count() != inputs.dataset.len() {
        return Err(GateError::invalid("graph and dataset sizes differ"));
    }
    if strategies.contains(&Strategy::Gate) && inputs.index.is_none() {
        return Err(GateError::invalid("the gate strategy needs an assembled index"));
    }
    if let Some(&bad) = ls_sweep.iter().find(|&&l| l < k) {
        return Err(GateError::invalid(format!("l_s = {bad} is below k = {k}")));
    }
    let mut report = BenchReport::default();
    let mut scratch = SearchScratch::new(inputs.graph.node_count());
    for &strategy in strategies {
        for &l_s in ls_sweep {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (l_s as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut ids = Vec::with_capacity(n);
            let mut hops = Vec::with_capacity(n);
            let mut evals = 0usize;
            let start = Instant::now();
            for q in inputs.queries.iter() {
                let out = match strategy {
                    Strategy::Random => {
                        let seeds = random_entries(inputs.graph.node_count(), l_s, &mut rng);
                        greedy_search_with(inputs.graph, inputs.dataset, q, l_s, k, &seeds, &mut scratch)?
                    }
                    Strategy::Medoid => {
                        greedy_search_with(inputs.graph, inputs.dataset, q, l_s, k, &[inputs.medoid], &mut scratch)?
                    }
                    Strategy::Gate => {
                        let index = inputs.index.expect("checked above");
                        index.search_with(inputs.dataset, q, l_s, k, &mut scratch)?.search
                    }
                };
                hops.push(out.hops);
                evals += out.distance_evals;
                ids.push(out.results.ids);
            }
            let elapsed = start.elapsed().as_secs_f64().max(1e-9);
            let mut recall = 0.0;
            for (got, truth) in ids.iter().zip(inputs.truth) {
                recall += recall_ids(got, truth, k)?;
            }
            let mean_hops = hops.iter().sum::<usize>() as f64 / n as f64;
            let row = BenchRow {
                strategy,
                l_s,
                k,
                recall: recall / n as f64,
                mean_hops,
                median_hops: median(&mut hops),
                dist_evals: evals as f64 / n as f64,
                qps: n as f64 / elapsed,
                n_queries: n,
            };
            log::info!(
                "{strategy} l_s={l_s}: recall@{k} {:.4}, hops {:.1}, {:.0} qps",
                row.recall,
                row.mean_hops,
                row.qps
            );
            report.rows.push(row);
            report.results.push(ids);
        }
    }
    Ok(report)
}
