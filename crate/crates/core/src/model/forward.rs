//! Forward and backward passes of the fusion attention, the two MLP towers,
//! the output normalization and the contrastive loss, all in `f64`.

use super::params::{Dense, Tensor, TwoTowerParams};
use crate::error::{GateError, Result};

/// Norm below which an output is treated as degenerate.
pub const NORM_FLOOR: f64 = 1e-12;

/// `y = x · W` for row-major `W` (`x.len() × out`), accumulated into `y`.
#[inline]
fn vec_mat_acc(x: &[f64], w: &[f64], out: usize, y: &mut [f64]) {
    for (xi, row) in x.iter().zip(w.chunks_exact(out)) {
        if *xi == 0.0 {
            continue;
        }
        for (yj, wij) in y.iter_mut().zip(row) {
            *yj += xi * wij;
        }
    }
}

/// `dx = W · dy`.
#[inline]
fn mat_vec(w: &[f64], out: usize, dy: &[f64], dx: &mut [f64]) {
    for (dxi, row) in dx.iter_mut().zip(w.chunks_exact(out)) {
        *dxi = row.iter().zip(dy).map(|(a, b)| a * b).sum();
    }
}

/// `dW += x ⊗ dy`.
#[inline]
fn outer_acc(x: &[f64], dy: &[f64], dw: &mut [f64]) {
    let out = dy.len();
    for (xi, row) in x.iter().zip(dw.chunks_exact_mut(out)) {
        if *xi == 0.0 {
            continue;
        }
        for (g, d) in row.iter_mut().zip(dy) {
            *g += xi * d;
        }
    }
}

fn project(params: &TwoTowerParams, t: Tensor, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; t.cols];
    vec_mat_acc(x, params.slice(t), t.cols, &mut y);
    y
}

/// Intermediate values of one fusion pass.
#[derive(Debug, Clone)]
pub struct FusionCache {
    q: Vec<Vec<f64>>,
    k: Vec<Vec<Vec<f64>>>,
    v: Vec<Vec<Vec<f64>>>,
    attn: Vec<Vec<f64>>,
    concat: Vec<f64>,
}

/// Multi-head attention of one hub vector over `tokens` topology features:
/// per head `softmax((p·W_Q)(U·W_K)ᵀ/√d_k) · (U·W_V)`, heads concatenated
/// and mapped through `W_O`. With a single token every softmax is exactly 1.
pub fn fusion_forward(params: &TwoTowerParams, p: &[f64], tokens: &[&[f64]]) -> Result<(Vec<f64>, FusionCache)> {
    let s = &params.shape;
    if p.len() != s.d_p {
        return Err(GateError::invalid(format!("hub vector has {} dims, expected {}", p.len(), s.d_p)));
    }
    if tokens.is_empty() || tokens.iter().any(|u| u.len() != s.d_u) {
        return Err(GateError::invalid(format!("need at least one topology token of {} dims", s.d_u)));
    }
    let l = &params.layout;
    let scale = 1.0 / (s.d_k as f64).sqrt();
    let mut cache = FusionCache {
        q: Vec::with_capacity(s.heads),
        k: Vec::with_capacity(s.heads),
        v: Vec::with_capacity(s.heads),
        attn: Vec::with_capacity(s.heads),
        concat: Vec::with_capacity(s.heads * s.d_k),
    };
    for j in 0..s.heads {
        let q = project(params, l.wq[j], p);
        let k: Vec<Vec<f64>> = tokens.iter().map(|u| project(params, l.wk[j], u)).collect();
        let v: Vec<Vec<f64>> = tokens.iter().map(|u| project(params, l.wv[j], u)).collect();
        let attn = if tokens.len() == 1 {
            vec![1.0]
        } else {
            let scores: Vec<f64> = k.iter().map(|kt| scale * dot(&q, kt)).collect();
            softmax(&scores)
        };
        let mut head = vec![0.0; s.d_k];
        for (a, vt) in attn.iter().zip(&v) {
            for (h, x) in head.iter_mut().zip(vt) {
                *h += a * x;
            }
        }
        cache.concat.extend_from_slice(&head);
        cache.q.push(q);
        cache.k.push(k);
        cache.v.push(v);
        cache.attn.push(attn);
    }
    let f = project(params, l.wo, &cache.concat);
    Ok((f, cache))
}

/// Accumulates parameter gradients of a fusion pass given `dF`.
pub fn fusion_backward(
    params: &TwoTowerParams,
    p: &[f64],
    tokens: &[&[f64]],
    cache: &FusionCache,
    df: &[f64],
    grad: &mut [f64],
) {
    let s = &params.shape;
    let l = &params.layout;
    let scale = 1.0 / (s.d_k as f64).sqrt();
    outer_acc(&cache.concat, df, &mut grad[l.wo.range()]);
    let mut dconcat = vec![0.0; s.heads * s.d_k];
    mat_vec(params.slice(l.wo), s.d_f, df, &mut dconcat);
    for j in 0..s.heads {
        let dhead = &dconcat[j * s.d_k..(j + 1) * s.d_k];
        let attn = &cache.attn[j];
        // values
        for (t, u) in tokens.iter().enumerate() {
            let dv: Vec<f64> = dhead.iter().map(|d| attn[t] * d).collect();
            outer_acc(u, &dv, &mut grad[l.wv[j].range()]);
        }
        if tokens.len() == 1 {
            // softmax over one score is constant: no gradient reaches W_Q, W_K
            continue;
        }
        let da: Vec<f64> = cache.v[j].iter().map(|vt| dot(dhead, vt)).collect();
        let mean = dot(attn, &da);
        let ds: Vec<f64> = attn.iter().zip(&da).map(|(a, d)| a * (d - mean)).collect();
        let mut dq = vec![0.0; s.d_k];
        for (t, u) in tokens.iter().enumerate() {
            for (g, kx) in dq.iter_mut().zip(&cache.k[j][t]) {
                *g += ds[t] * scale * kx;
            }
            let dk: Vec<f64> = cache.q[j].iter().map(|qx| ds[t] * scale * qx).collect();
            outer_acc(u, &dk, &mut grad[l.wk[j].range()]);
        }
        outer_acc(p, &dq, &mut grad[l.wq[j].range()]);
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Layer inputs and pre-activations of one MLP pass.
#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

/// Affine layers with ReLU between them and none after the last.
pub fn mlp_forward(params: &TwoTowerParams, layers: &[Dense], x: &[f64]) -> (Vec<f64>, MlpCache) {
    let mut cache = MlpCache::default();
    let mut h = x.to_vec();
    for (i, d) in layers.iter().enumerate() {
        let mut y = params.slice(d.b).to_vec();
        vec_mat_acc(&h, params.slice(d.w), d.w.cols, &mut y);
        cache.inputs.push(h);
        cache.pre.push(y.clone());
        if i + 1 < layers.len() {
            y.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        h = y;
    }
    (h, cache)
}

/// Accumulates parameter gradients and returns the gradient at the input.
pub fn mlp_backward(
    params: &TwoTowerParams,
    layers: &[Dense],
    cache: &MlpCache,
    dout: &[f64],
    grad: &mut [f64],
) -> Vec<f64> {
    let mut dy = dout.to_vec();
    for i in (0..layers.len()).rev() {
        let d = layers[i];
        if i + 1 < layers.len() {
            for (g, z) in dy.iter_mut().zip(&cache.pre[i]) {
                if *z <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        outer_acc(&cache.inputs[i], &dy, &mut grad[d.w.range()]);
        for (g, v) in grad[d.b.range()].iter_mut().zip(&dy) {
            *g += v;
        }
        let mut dx = vec![0.0; d.w.rows];
        mat_vec(params.slice(d.w), d.w.cols, &dy, &mut dx);
        dy = dx;
    }
    dy
}

/// Every ReLU input of the pass, for detecting activation-pattern changes.
pub fn relu_inputs(cache: &MlpCache) -> impl Iterator<Item = f64> + '_ {
    let hidden = cache.pre.len().saturating_sub(1);
    cache.pre[..hidden].iter().flatten().copied()
}

/// Unit-norm output. A vector with norm below [`NORM_FLOOR`] is nudged by
/// the floor along the first axis before normalizing; the flag reports it.
pub fn normalize(y: &[f64]) -> (Vec<f64>, f64, bool) {
    let mut y = y.to_vec();
    let mut n = dot(&y, &y).sqrt();
    let degenerate = n.is_nan() || n < NORM_FLOOR;
    if degenerate {
        y[0] += NORM_FLOOR;
        n = dot(&y, &y).sqrt().max(NORM_FLOOR);
    }
    (y.iter().map(|v| v / n).collect(), n, degenerate)
}

/// Gradient through `z = y / ‖y‖`.
pub fn normalize_backward(z: &[f64], norm: f64, dz: &[f64]) -> Vec<f64> {
    let proj = dot(z, dz);
    z.iter().zip(dz).map(|(zi, d)| (d - zi * proj) / norm).collect()
}

/// `−Σ_{p∈P} log(exp(s_p/τ) / Σ_{x∈P∪N} exp(s_x/τ))` over cosine scores
/// `s`; the positive sum stays in the denominator.
pub fn contrastive_from_scores(pos: &[f64], neg: &[f64], tau: f64) -> Result<f64> {
    if pos.is_empty() {
        return Err(GateError::invalid("contrastive loss needs at least one positive"));
    }
    let logits: Vec<f64> = pos.iter().chain(neg).map(|s| s / tau).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    Ok(pos.iter().map(|s| lse - s / tau).sum())
}

/// Loss and `dL/ds` for every score, positives first.
pub fn contrastive_with_grad(pos: &[f64], neg: &[f64], tau: f64) -> Result<(f64, Vec<f64>)> {
    let loss = contrastive_from_scores(pos, neg, tau)?;
    let logits: Vec<f64> = pos.iter().chain(neg).map(|s| s / tau).collect();
    let w = softmax(&logits);
    let np = pos.len() as f64;
    let grad = w.iter().enumerate().map(|(i, wi)| (np * wi - if i < pos.len() { 1.0 } else { 0.0 }) / tau).collect();
    Ok((loss, grad))
}

/// Contrastive loss over unit latents.
pub fn contrastive_loss(hub: &[f64], positives: &[Vec<f64>], negatives: &[Vec<f64>], tau: f64) -> Result<f64> {
    let pos: Vec<f64> = positives.iter().map(|q| dot(hub, q)).collect();
    let neg: Vec<f64> = negatives.iter().map(|q| dot(hub, q)).collect();
    contrastive_from_scores(&pos, &neg, tau)
}
