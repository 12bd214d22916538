//! Two-tower model: fusion attention over a hub's raw vector and topology
//! feature, separate MLP towers for hubs and queries projecting into one
//! unit-sphere latent space, and a contrastive objective tying each hub to
//! the historical queries it reaches quickly.

mod forward;
pub mod gradcheck;
mod params;
mod train;

use std::path::Path;

use rayon::prelude::*;

pub use forward::{contrastive_from_scores, contrastive_loss, contrastive_with_grad, dot, softmax, NORM_FLOOR};
pub use params::{Dense, Layout, ModelShape, Tensor, TwoTowerParams};
pub use train::{train, TrainConfig, TrainReport};

use forward::{
    fusion_backward, fusion_forward, mlp_backward, mlp_forward, normalize, normalize_backward, relu_inputs,
    FusionCache, MlpCache,
};

use crate::dataset::VectorDataset;
use crate::error::{GateError, Result};
use crate::io::{load_fvecs, save_fvecs};

fn widen(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| v as f64).collect()
}

/// A unit-norm tower output.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub latent: Vec<f64>,
    /// True when the pre-normalization output was (numerically) zero and
    /// the norm floor was applied.
    pub degenerate: bool,
}

/// Fusion embedding `F` of a hub vector `p` attending over topology tokens.
/// The pipeline passes a single token, for which the attention weight is 1.
pub fn fusion_embed(params: &TwoTowerParams, p: &[f32], tokens: &[&[f32]]) -> Result<Vec<f64>> {
    let tokens: Vec<Vec<f64>> = tokens.iter().map(|t| widen(t)).collect();
    let refs: Vec<&[f64]> = tokens.iter().map(Vec::as_slice).collect();
    Ok(fusion_forward(params, &widen(p), &refs)?.0)
}

/// Hub tower over `[p ; F]`, normalized.
pub fn project_hub(params: &TwoTowerParams, p: &[f32], f: &[f64]) -> Result<Projection> {
    let s = &params.shape;
    if p.len() != s.d_p || f.len() != s.d_f {
        return Err(GateError::invalid(format!(
            "hub tower expects {} + {} inputs, got {} + {}",
            s.d_p,
            s.d_f,
            p.len(),
            f.len()
        )));
    }
    let mut x = widen(p);
    x.extend_from_slice(f);
    let (y, _) = mlp_forward(params, &params.layout.hub_mlp, &x);
    let (latent, _, degenerate) = normalize(&y);
    Ok(Projection { latent, degenerate })
}

pub fn project_query(params: &TwoTowerParams, q: &[f32]) -> Result<Projection> {
    if q.len() != params.shape.d_p {
        return Err(GateError::invalid(format!("query tower expects {} inputs, got {}", params.shape.d_p, q.len())));
    }
    let (y, _) = mlp_forward(params, &params.layout.query_mlp, &widen(q));
    let (latent, _, degenerate) = normalize(&y);
    Ok(Projection { latent, degenerate })
}

/// One hub's training example; sample entries index the batch query list.
#[derive(Debug, Clone)]
pub struct HubExample<'a> {
    pub p: &'a [f32],
    pub tokens: Vec<&'a [f32]>,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

/// Result of a batch pass.
#[derive(Debug, Clone)]
pub struct BatchEval {
    /// Mean of the per-hub losses.
    pub loss: f64,
    pub hub_losses: Vec<f64>,
    pub grad: Option<Vec<f64>>,
    /// Outputs that hit the norm floor.
    pub degenerate: usize,
}

struct QueryPass {
    cache: MlpCache,
    z: Vec<f64>,
    norm: f64,
    degenerate: bool,
}

struct HubPass {
    p: Vec<f64>,
    tokens: Vec<Vec<f64>>,
    fusion: FusionCache,
    cache: MlpCache,
    z: Vec<f64>,
    norm: f64,
    degenerate: bool,
}

fn query_pass(params: &TwoTowerParams, q: &[f32]) -> QueryPass {
    let x = widen(q);
    let (y, cache) = mlp_forward(params, &params.layout.query_mlp, &x);
    let (z, norm, degenerate) = normalize(&y);
    QueryPass { cache, z, norm, degenerate }
}

fn hub_pass(params: &TwoTowerParams, ex: &HubExample<'_>) -> Result<HubPass> {
    let p = widen(ex.p);
    let tokens: Vec<Vec<f64>> = ex.tokens.iter().map(|t| widen(t)).collect();
    let refs: Vec<&[f64]> = tokens.iter().map(Vec::as_slice).collect();
    let (f, fusion) = fusion_forward(params, &p, &refs)?;
    let mut x = p.clone();
    x.extend_from_slice(&f);
    let (y, cache) = mlp_forward(params, &params.layout.hub_mlp, &x);
    let (z, norm, degenerate) = normalize(&y);
    Ok(HubPass { p, tokens, fusion, cache, z, norm, degenerate })
}

/// Work items per parallel chunk; fixed so gradient sums are reduced in
/// the same order on any thread count.
const CHUNK: usize = 64;

fn chunked_grad<T: Sync>(items: &[T], len: usize, f: impl Fn(&T, &mut [f64]) + Sync) -> Vec<f64> {
    let parts: Vec<Vec<f64>> = items
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = vec![0.0; len];
            for it in chunk {
                f(it, &mut g);
            }
            g
        })
        .collect();
    let mut total = vec![0.0; len];
    for part in parts {
        for (t, v) in total.iter_mut().zip(part) {
            *t += v;
        }
    }
    total
}

/// Mean contrastive loss over `hubs` and, optionally, its gradient with
/// respect to every parameter.
pub fn batch_eval(
    params: &TwoTowerParams,
    hubs: &[HubExample<'_>],
    queries: &[&[f32]],
    want_grad: bool,
) -> Result<BatchEval> {
    if hubs.is_empty() {
        return Err(GateError::invalid("batch has no hubs"));
    }
    for h in hubs {
        if h.positives.is_empty() {
            return Err(GateError::invalid("every hub in a batch needs a positive"));
        }
        if let Some(&bad) = h.positives.iter().chain(&h.negatives).find(|&&i| i >= queries.len()) {
            return Err(GateError::invalid(format!("sample index {bad} outside the batch query list")));
        }
    }
    if let Some(q) = queries.iter().find(|q| q.len() != params.shape.d_p) {
        return Err(GateError::invalid(format!("query has {} dims, expected {}", q.len(), params.shape.d_p)));
    }
    let qpass: Vec<QueryPass> = queries.par_iter().map(|q| query_pass(params, q)).collect();
    let hpass: Vec<HubPass> = hubs.par_iter().map(|h| hub_pass(params, h)).collect::<Result<_>>()?;
    let degenerate = qpass.iter().filter(|q| q.degenerate).count() + hpass.iter().filter(|h| h.degenerate).count();

    let inv = 1.0 / hubs.len() as f64;
    let mut hub_losses = Vec::with_capacity(hubs.len());
    let mut dhub: Vec<Vec<f64>> = Vec::with_capacity(hubs.len());
    let mut dquery = vec![vec![0.0; params.shape.latent]; queries.len()];
    for (ex, hp) in hubs.iter().zip(&hpass) {
        let pos: Vec<f64> = ex.positives.iter().map(|&i| dot(&hp.z, &qpass[i].z)).collect();
        let neg: Vec<f64> = ex.negatives.iter().map(|&i| dot(&hp.z, &qpass[i].z)).collect();
        let (loss, ds) = contrastive_with_grad(&pos, &neg, params.tau)?;
        hub_losses.push(loss);
        let mut dz = vec![0.0; params.shape.latent];
        for (&qi, g) in ex.positives.iter().chain(&ex.negatives).zip(&ds) {
            let g = g * inv;
            for (d, qz) in dz.iter_mut().zip(&qpass[qi].z) {
                *d += g * qz;
            }
            for (dq, hz) in dquery[qi].iter_mut().zip(&hp.z) {
                *dq += g * hz;
            }
        }
        dhub.push(dz);
    }
    let loss = hub_losses.iter().sum::<f64>() * inv;

    let grad = want_grad.then(|| {
        let n = params.len();
        let d_p = params.shape.d_p;
        let hub_items: Vec<(&HubPass, &Vec<f64>)> = hpass.iter().zip(&dhub).collect();
        let mut g = chunked_grad(&hub_items, n, |(hp, dz), g| {
            let dy = normalize_backward(&hp.z, hp.norm, dz);
            let dx = mlp_backward(params, &params.layout.hub_mlp, &hp.cache, &dy, g);
            let refs: Vec<&[f64]> = hp.tokens.iter().map(Vec::as_slice).collect();
            fusion_backward(params, &hp.p, &refs, &hp.fusion, &dx[d_p..], g);
        });
        let q_items: Vec<(&QueryPass, &Vec<f64>)> = qpass.iter().zip(&dquery).collect();
        let gq = chunked_grad(&q_items, n, |(qp, dz), g| {
            if dz.iter().all(|v| *v == 0.0) {
                return;
            }
            let dy = normalize_backward(&qp.z, qp.norm, dz);
            mlp_backward(params, &params.layout.query_mlp, &qp.cache, &dy, g);
        });
        for (a, b) in g.iter_mut().zip(gq) {
            *a += b;
        }
        g
    });
    Ok(BatchEval { loss, hub_losses, grad, degenerate })
}

/// Signs of every ReLU input in a batch pass; a change between two
/// parameter points means the loss is not smooth between them.
pub fn activation_pattern(params: &TwoTowerParams, hubs: &[HubExample<'_>], queries: &[&[f32]]) -> Result<Vec<bool>> {
    let mut out = Vec::new();
    for h in hubs {
        let hp = hub_pass(params, h)?;
        out.extend(relu_inputs(&hp.cache).map(|v| v > 0.0));
    }
    for q in queries {
        let qp = query_pass(params, q);
        out.extend(relu_inputs(&qp.cache).map(|v| v > 0.0));
    }
    Ok(out)
}

/// Fusion embeddings and projected latents of every hub, in hub order.
#[derive(Debug, Clone, PartialEq)]
pub struct HubLatentTable {
    pub fusion: VectorDataset,
    pub latents: VectorDataset,
}

impl HubLatentTable {
    /// Runs fusion and the hub tower for every hub; `topo` row `i` is hub
    /// `i`'s topology feature.
    pub fn compute(
        params: &TwoTowerParams,
        dataset: &VectorDataset,
        hub_ids: &[u32],
        topo: &VectorDataset,
    ) -> Result<Self> {
        if topo.len() != hub_ids.len() {
            return Err(GateError::invalid(format!("{} topology features for {} hubs", topo.len(), hub_ids.len())));
        }
        let rows: Vec<(Vec<f32>, Vec<f32>)> = hub_ids
            .par_iter()
            .enumerate()
            .map(|(i, &id)| {
                let p = dataset.get(id as usize);
                let f = fusion_embed(params, p, &[topo.get(i)])?;
                let z = project_hub(params, p, &f)?;
                let narrow = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
                Ok((narrow(&f), narrow(&z.latent)))
            })
            .collect::<Result<_>>()?;
        let (f, z): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
        Ok(Self {
            fusion: VectorDataset::new(params.shape.d_f, f.into_iter().flatten().collect())?,
            latents: VectorDataset::new(params.shape.latent, z.into_iter().flatten().collect())?,
        })
    }

    pub fn len(&self) -> usize {
        self.latents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }

    pub fn save(&self, latents: impl AsRef<Path>, fusion: impl AsRef<Path>) -> Result<()> {
        save_fvecs(&self.latents, latents)?;
        save_fvecs(&self.fusion, fusion)
    }

    pub fn load(latents: impl AsRef<Path>, fusion: impl AsRef<Path>) -> Result<Self> {
        let t = Self { latents: load_fvecs(latents)?, fusion: load_fvecs(fusion)? };
        if t.latents.len() != t.fusion.len() {
            return Err(GateError::Config("latent and fusion tables differ in length".into()));
        }
        Ok(t)
    }
}
