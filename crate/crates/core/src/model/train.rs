use std::collections::HashMap;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{batch_eval, HubExample, TwoTowerParams};
use crate::dataset::VectorDataset;
use crate::error::{GateError, Result};
use crate::sampling::SampleQueues;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Adam step size; zero leaves the parameters untouched.
    pub lr: f64,
    pub epochs: usize,
    /// Hubs per optimizer step.
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Negatives drawn from each hub's queue per epoch.
    pub negatives_per_hub: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 30,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            negatives_per_hub: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(GateError::Config(format!("learning rate {} must be finite and non-negative", self.lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(GateError::Config("epochs and batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || self.eps.is_nan()
            || self.eps <= 0.0
        {
            return Err(GateError::Config("Adam moments need betas in [0, 1) and a positive epsilon".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean per-hub loss of each epoch, measured while it ran.
    pub epoch_losses: Vec<f64>,
    /// Hub indices left out for lack of positives.
    pub excluded_hubs: Vec<usize>,
    /// Outputs that hit the norm floor over the whole run.
    pub degenerate_outputs: usize,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn step(&mut self, cfg: &TrainConfig, data: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (((x, g), m), v) in data.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *x -= cfg.lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
        }
    }
}

/// Trains `params` in place on the mined queues and rounds the result to
/// `f32` precision. `topo` row `i` is the topology feature of hub `i`.
pub fn train(
    params: &mut TwoTowerParams,
    dataset: &VectorDataset,
    topo: &VectorDataset,
    queries: &VectorDataset,
    samples: &SampleQueues,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    let n_hubs = samples.hubs.len();
    if topo.len() != n_hubs {
        return Err(GateError::invalid(format!("{} topology features for {n_hubs} hubs", topo.len())));
    }
    if dataset.dim() != params.shape.d_p || queries.dim() != params.shape.d_p || topo.dim() != params.shape.d_u {
        return Err(GateError::invalid("input dimensions do not match the model shape"));
    }
    let max_q =
        samples.queues.iter().flat_map(|q| q.positives.iter().chain(&q.negatives)).map(|&(q, _)| q as usize).max();
    if max_q.is_some_and(|m| m >= queries.len()) {
        return Err(GateError::invalid("sample queue references a query outside the query set"));
    }
    if let Some(&bad) = samples.hubs.iter().find(|&&h| h as usize >= dataset.len()) {
        return Err(GateError::invalid(format!("hub {bad} out of range")));
    }

    let (active, excluded): (Vec<usize>, Vec<usize>) =
        (0..n_hubs).partition(|&i| !samples.queues[i].positives.is_empty());
    if !excluded.is_empty() {
        log::warn!("{} hubs have no positive queries and are left out of training", excluded.len());
    }
    if active.is_empty() {
        return Err(GateError::Config("no hub has a positive query; nothing to train on".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam { m: vec![0.0; params.len()], v: vec![0.0; params.len()], t: 0 };
    let mut report =
        TrainReport { epoch_losses: Vec::with_capacity(cfg.epochs), excluded_hubs: excluded, degenerate_outputs: 0 };
    let mut order = active.clone();
    let mut hub_loss = vec![0.0; n_hubs];
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let negatives: HashMap<usize, Vec<u32>> = active
            .iter()
            .map(|&h| {
                let pool = &samples.queues[h].negatives;
                let picked = if pool.len() <= cfg.negatives_per_hub {
                    pool.iter().map(|&(q, _)| q).collect()
                } else {
                    let mut idx = index::sample(&mut rng, pool.len(), cfg.negatives_per_hub).into_vec();
                    idx.sort_unstable();
                    idx.into_iter().map(|i| pool[i].0).collect()
                };
                (h, picked)
            })
            .collect();

        for batch in order.chunks(cfg.batch_size) {
            let mut slot: HashMap<u32, usize> = HashMap::new();
            let mut qrefs: Vec<&[f32]> = Vec::new();
            let mut local = |q: u32| {
                *slot.entry(q).or_insert_with(|| {
                    qrefs.push(queries.get(q as usize));
                    qrefs.len() - 1
                })
            };
            let mut examples = Vec::with_capacity(batch.len());
            for &h in batch {
                let positives = samples.queues[h].positives.iter().map(|&(q, _)| local(q)).collect();
                let negs = negatives[&h].iter().map(|&q| local(q)).collect();
                examples.push(HubExample {
                    p: dataset.get(samples.hubs[h] as usize),
                    tokens: vec![topo.get(h)],
                    positives,
                    negatives: negs,
                });
            }
            let eval = batch_eval(params, &examples, &qrefs, cfg.lr > 0.0)?;
            report.degenerate_outputs += eval.degenerate;
            for (&h, l) in batch.iter().zip(&eval.hub_losses) {
                hub_loss[h] = *l;
            }
            if let Some(g) = eval.grad {
                adam.step(cfg, &mut params.data, &g);
                if !params.is_finite() {
                    return Err(GateError::Internal(format!("parameters diverged in epoch {epoch}")));
                }
            }
        }
        let mean = active.iter().map(|&h| hub_loss[h]).sum::<f64>() / active.len() as f64;
        log::info!("epoch {epoch}: loss {mean:.6}");
        report.epoch_losses.push(mean);
    }
    params.round_to_f32();
    Ok(report)
}
