#![allow(dead_code)]

use gate_core::graph::{build_knn_graph, build_nsg, NsgBuild, NsgParams};
use gate_core::VectorDataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_dataset(n: usize, dim: usize, seed: u64) -> VectorDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    VectorDataset::new(dim, data).unwrap()
}

pub fn small_nsg(ds: &VectorDataset) -> NsgBuild {
    let knn = build_knn_graph(ds, 16.min(ds.len() - 1)).unwrap();
    build_nsg(ds, &knn, NsgParams { l_build: 40, r_deg: 24, c_pool: 200 }).unwrap()
}

/// Two tight blobs of `per` points each, centered at ±`gap` on the first axis.
pub fn two_blobs(per: usize, dim: usize, gap: f32, seed: u64) -> VectorDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(2 * per * dim);
    for side in [-1.0f32, 1.0] {
        for _ in 0..per {
            for d in 0..dim {
                let c = if d == 0 { side * gap } else { 0.0 };
                data.push(c + rng.random_range(-1.0f32..1.0));
            }
        }
    }
    VectorDataset::new(dim, data).unwrap()
}
