//! Central finite-difference verification of the analytic gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{activation_pattern, batch_eval, HubExample, ModelShape, Tensor, TwoTowerParams};
use crate::error::{GateError, Result};

/// A small self-contained batch with owned inputs.
#[derive(Debug, Clone)]
pub struct GradProblem {
    pub params: TwoTowerParams,
    pub hub_vectors: Vec<Vec<f32>>,
    /// Topology tokens per hub.
    pub tokens: Vec<Vec<Vec<f32>>>,
    pub queries: Vec<Vec<f32>>,
    pub positives: Vec<Vec<usize>>,
    pub negatives: Vec<Vec<usize>>,
}

impl GradProblem {
    /// Random batch: `hubs` hubs, each with `tokens` topology tokens, two
    /// positives and three negatives among `queries` shared queries.
    pub fn random(shape: ModelShape, tau: f64, hubs: usize, tokens: usize, queries: usize, seed: u64) -> Result<Self> {
        if hubs == 0 || tokens == 0 || queries < 5 {
            return Err(GateError::invalid("need a hub, a token and at least five queries"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6a09_e667_f3bc_c908);
        let gauss =
            |n: usize, rng: &mut ChaCha8Rng| -> Vec<f32> { (0..n).map(|_| StandardNormal.sample(rng)).collect() };
        let params = TwoTowerParams::init(shape.clone(), tau, seed)?;
        let hub_vectors = (0..hubs).map(|_| gauss(shape.d_p, &mut rng)).collect();
        let tokens = (0..hubs).map(|_| (0..tokens).map(|_| gauss(shape.d_u, &mut rng)).collect()).collect();
        let qs = (0..queries).map(|_| gauss(shape.d_p, &mut rng)).collect();
        let mut positives = Vec::new();
        let mut negatives = Vec::new();
        for _ in 0..hubs {
            let picked = rand::seq::index::sample(&mut rng, queries, 5).into_vec();
            let split = rng.random_range(1..=2);
            positives.push(picked[..split].to_vec());
            negatives.push(picked[split..].to_vec());
        }
        Ok(Self { params, hub_vectors, tokens, queries: qs, positives, negatives })
    }

    pub fn examples(&self) -> Vec<HubExample<'_>> {
        (0..self.hub_vectors.len())
            .map(|i| HubExample {
                p: &self.hub_vectors[i],
                tokens: self.tokens[i].iter().map(Vec::as_slice).collect(),
                positives: self.positives[i].clone(),
                negatives: self.negatives[i].clone(),
            })
            .collect()
    }

    pub fn query_refs(&self) -> Vec<&[f32]> {
        self.queries.iter().map(Vec::as_slice).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Coordinates compared.
    pub checked: usize,
    /// Coordinates skipped because a ReLU changed sign inside the stencil.
    pub skipped: usize,
    /// `‖a − n‖ / max(‖a‖, ‖n‖)` per parameter tensor, over the compared
    /// coordinates.
    pub tensor_errors: Vec<(String, f64)>,
    /// Largest single-coordinate relative error and where it occurred.
    /// Coordinates with tiny gradients are dominated by the O(step²)
    /// truncation of the difference quotient, so this is diagnostic.
    pub max_coord_error: f64,
    pub worst_index: usize,
    /// Coordinates whose own relative error exceeded the tolerance.
    pub coords_over_tol: usize,
}

impl GradCheckReport {
    pub fn max_tensor_error(&self) -> f64 {
        self.tensor_errors.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_tensor_error() <= tol
    }
}

fn named_tensors(params: &TwoTowerParams) -> Vec<(String, Tensor)> {
    let l = &params.layout;
    let mut out = Vec::new();
    for j in 0..l.wq.len() {
        out.push((format!("w_q[{j}]"), l.wq[j]));
        out.push((format!("w_k[{j}]"), l.wk[j]));
        out.push((format!("w_v[{j}]"), l.wv[j]));
    }
    out.push(("w_o".into(), l.wo));
    for (tower, layers) in [("hub", &l.hub_mlp), ("query", &l.query_mlp)] {
        for (i, d) in layers.iter().enumerate() {
            out.push((format!("{tower}.w[{i}]"), d.w));
            out.push((format!("{tower}.b[{i}]"), d.b));
        }
    }
    out
}

/// `|a − n| / max(|a|, |n|)`, zero when both are exactly zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    vector_relative_error(&[analytic], &[numeric])
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, zero when both are exactly zero.
pub fn vector_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    if scale == 0.0 {
        0.0
    } else {
        norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n)) / scale
    }
}

/// Compares the analytic gradient of the mean batch loss with central
/// differences of step `step` on every parameter. `tol` only feeds the
/// per-coordinate tally; use [`GradCheckReport::passes`] for the verdict.
pub fn check_gradients(problem: &GradProblem, step: f64, tol: f64) -> Result<GradCheckReport> {
    if step.is_nan() || step <= 0.0 {
        return Err(GateError::invalid("finite-difference step must be positive"));
    }
    let examples = problem.examples();
    let queries = problem.query_refs();
    let analytic = batch_eval(&problem.params, &examples, &queries, true)?.grad.expect("gradient requested");
    let base_pattern = activation_pattern(&problem.params, &examples, &queries)?;

    let mut report = GradCheckReport {
        checked: 0,
        skipped: 0,
        tensor_errors: Vec::new(),
        max_coord_error: 0.0,
        worst_index: 0,
        coords_over_tol: 0,
    };
    let mut numeric = vec![f64::NAN; analytic.len()];
    let mut shifted = problem.params.clone();
    for (i, &a) in analytic.iter().enumerate() {
        let x = shifted.data[i];
        shifted.data[i] = x + step;
        let plus = batch_eval(&shifted, &examples, &queries, false)?.loss;
        let kink_plus = activation_pattern(&shifted, &examples, &queries)? != base_pattern;
        shifted.data[i] = x - step;
        let minus = batch_eval(&shifted, &examples, &queries, false)?.loss;
        let kink_minus = activation_pattern(&shifted, &examples, &queries)? != base_pattern;
        shifted.data[i] = x;
        if kink_plus || kink_minus {
            report.skipped += 1;
            continue;
        }
        numeric[i] = (plus - minus) / (2.0 * step);
        let err = relative_error(a, numeric[i]);
        report.checked += 1;
        if err > tol {
            report.coords_over_tol += 1;
        }
        if err > report.max_coord_error {
            report.max_coord_error = err;
            report.worst_index = i;
        }
    }
    for (name, t) in named_tensors(&problem.params) {
        let (a, n): (Vec<f64>, Vec<f64>) =
            t.range().filter(|&i| !numeric[i].is_nan()).map(|i| (analytic[i], numeric[i])).unzip();
        report.tensor_errors.push((name, vector_relative_error(&a, &n)));
    }
    Ok(report)
}
