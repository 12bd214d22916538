//! Seeded Gaussian-mixture data with planted cluster labels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::VectorDataset;
use crate::error::{GateError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n_points: usize,
    pub n_queries: usize,
    pub dim: usize,
    pub n_clusters: usize,
    /// Per-coordinate standard deviation around each cluster mean.
    pub spread: f32,
    /// Per-coordinate standard deviation of the cluster means themselves.
    pub center_scale: f32,
    /// When positive, query means are displaced by this length along a
    /// random direction per cluster (out-of-distribution queries).
    pub ood_shift: f32,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_points: 10_000,
            n_queries: 1_000,
            dim: 32,
            n_clusters: 16,
            spread: 1.0,
            center_scale: 4.0,
            ood_shift: 0.0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub base: VectorDataset,
    pub queries: VectorDataset,
    /// Planted cluster of every base point (`i % n_clusters`).
    pub labels: Vec<usize>,
    pub query_labels: Vec<usize>,
    pub means: Vec<Vec<f32>>,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, scale: f32) -> Vec<f32> {
    (0..dim).map(|_| scale * rng.sample::<f32, _>(StandardNormal)).collect()
}

pub fn gen_synthetic(cfg: &SyntheticConfig) -> Result<Synthetic> {
    if cfg.dim == 0 {
        return Err(GateError::invalid("dimension must be positive"));
    }
    if cfg.n_clusters == 0 || cfg.n_clusters > cfg.n_points {
        return Err(GateError::invalid(format!(
            "need 1 <= n_clusters <= n_points, got {} clusters for {} points",
            cfg.n_clusters, cfg.n_points
        )));
    }
    if !(cfg.spread >= 0.0 && cfg.center_scale >= 0.0 && cfg.ood_shift >= 0.0) {
        return Err(GateError::invalid("spread, center scale and shift must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let means: Vec<Vec<f32>> = (0..cfg.n_clusters).map(|_| gaussian(&mut rng, cfg.dim, cfg.center_scale)).collect();
    let query_means: Vec<Vec<f32>> = if cfg.ood_shift > 0.0 {
        means
            .iter()
            .map(|m| {
                let dir = gaussian(&mut rng, cfg.dim, 1.0);
                let norm = dir.iter().map(|x| x * x).sum::<f32>().sqrt().max(f32::MIN_POSITIVE);
                m.iter().zip(&dir).map(|(a, d)| a + cfg.ood_shift * d / norm).collect()
            })
            .collect()
    } else {
        means.clone()
    };

    let mut data = Vec::with_capacity(cfg.n_points * cfg.dim);
    let labels: Vec<usize> = (0..cfg.n_points).map(|i| i % cfg.n_clusters).collect();
    for &c in &labels {
        for x in &means[c] {
            data.push(x + cfg.spread * rng.sample::<f32, _>(StandardNormal));
        }
    }
    let mut qdata = Vec::with_capacity(cfg.n_queries * cfg.dim);
    let mut query_labels = Vec::with_capacity(cfg.n_queries);
    for _ in 0..cfg.n_queries {
        let c = rng.random_range(0..cfg.n_clusters);
        query_labels.push(c);
        for x in &query_means[c] {
            qdata.push(x + cfg.spread * rng.sample::<f32, _>(StandardNormal));
        }
    }
    Ok(Synthetic {
        base: VectorDataset::new(cfg.dim, data)?,
        queries: VectorDataset::new(cfg.dim, qdata)?,
        labels,
        query_labels,
        means,
    })
}
