mod common;

use gate_core::model::gradcheck::{check_gradients, GradProblem};
use gate_core::model::{
    batch_eval, contrastive_from_scores, contrastive_loss, fusion_embed, project_hub, project_query, train, HubExample,
    HubLatentTable, ModelShape, TrainConfig, TwoTowerParams,
};
use gate_core::sampling::{HubQueue, SampleQueues};
use gate_core::{GateError, VectorDataset};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn desk_shape() -> ModelShape {
    ModelShape { d_p: 32, d_u: 16, d_k: 8, heads: 2, d_f: 32, hub_hidden: vec![32], query_hidden: vec![32], latent: 16 }
}

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn gauss_row(rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
    (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

/// Index-loop attention written straight from the definition.
#[allow(clippy::needless_range_loop)]
fn naive_fusion(params: &TwoTowerParams, p: &[f32], tokens: &[Vec<f32>]) -> Vec<f64> {
    let s = &params.shape;
    let l = &params.layout;
    let w = |t: gate_core::model::Tensor, r: usize, c: usize| params.data[t.offset + r * t.cols + c];
    let mut concat: Vec<f64> = Vec::new();
    for j in 0..s.heads {
        let q: Vec<f64> = (0..s.d_k).map(|c| (0..s.d_p).map(|r| p[r] as f64 * w(l.wq[j], r, c)).sum()).collect();
        let proj = |m: gate_core::model::Tensor, u: &[f32]| -> Vec<f64> {
            (0..s.d_k).map(|c| (0..s.d_u).map(|r| u[r] as f64 * w(m, r, c)).sum()).collect()
        };
        let ks: Vec<Vec<f64>> = tokens.iter().map(|u| proj(l.wk[j], u)).collect();
        let vs: Vec<Vec<f64>> = tokens.iter().map(|u| proj(l.wv[j], u)).collect();
        let scores: Vec<f64> =
            ks.iter().map(|k| q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() / (s.d_k as f64).sqrt()).collect();
        let e: Vec<f64> = scores.iter().map(|x| x.exp()).collect();
        let z: f64 = e.iter().sum();
        for c in 0..s.d_k {
            concat.push((0..tokens.len()).map(|t| e[t] / z * vs[t][c]).sum());
        }
    }
    (0..s.d_f).map(|c| (0..concat.len()).map(|r| concat[r] * w(l.wo, r, c)).sum()).collect()
}

#[test]
fn fusion_matches_naive_attention() {
    let params = TwoTowerParams::init(desk_shape(), 0.07, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n_tokens in [1, 2, 5] {
        let p = gauss_row(&mut rng, 32);
        let toks: Vec<Vec<f32>> = (0..n_tokens).map(|_| gauss_row(&mut rng, 16)).collect();
        let refs: Vec<&[f32]> = toks.iter().map(Vec::as_slice).collect();
        let got = fusion_embed(&params, &p, &refs).unwrap();
        let want = naive_fusion(&params, &p, &toks);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-9, "{n_tokens} tokens: {a} vs {b}");
        }
    }
}

#[test]
fn single_token_fusion_ignores_query_and_key_weights() {
    let mut params = TwoTowerParams::init(desk_shape(), 0.07, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let p = gauss_row(&mut rng, 32);
    let u = gauss_row(&mut rng, 16);
    let before = fusion_embed(&params, &p, &[&u]).unwrap();
    let layout = params.layout.clone();
    for t in layout.wq.iter().chain(&layout.wk) {
        for x in &mut params.data[t.range()] {
            *x = rng.random_range(-5.0..5.0);
        }
    }
    assert_eq!(before, fusion_embed(&params, &p, &[&u]).unwrap());
}

#[test]
fn fusion_rejects_bad_inputs() {
    let params = TwoTowerParams::init(desk_shape(), 0.07, 0).unwrap();
    let p = vec![0.0f32; 32];
    assert!(fusion_embed(&params, &p, &[]).is_err());
    assert!(fusion_embed(&params, &p, &[&[0.0; 15]]).is_err());
    assert!(fusion_embed(&params, &p[..31], &[&[0.0; 16]]).is_err());
    assert!(project_query(&params, &p[..5]).is_err());
    assert!(project_hub(&params, &p, &[0.0; 3]).is_err());
}

#[test]
fn tower_outputs_are_unit_norm() {
    let params = TwoTowerParams::init(desk_shape(), 0.07, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let q = gauss_row(&mut rng, 32);
        let z = project_query(&params, &q).unwrap();
        let n: f64 = z.latent.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
        assert!(!z.degenerate);
    }
}

#[test]
fn zero_output_takes_the_floor_direction() {
    let params = TwoTowerParams::zeros(desk_shape(), 0.07).unwrap();
    let z = project_query(&params, &[1.0; 32]).unwrap();
    assert!(z.degenerate);
    assert_eq!(z.latent[0], 1.0);
    assert!(z.latent[1..].iter().all(|&x| x == 0.0));
}

#[test]
fn contrastive_closed_forms() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for tau in [0.07, 0.5, 2.0] {
        let s: f64 = rng.random_range(-1.0..1.0);
        assert_eq!(contrastive_from_scores(&[s], &[], tau).unwrap(), 0.0);
        let l = contrastive_from_scores(&[s], &[s], tau).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }
    assert!(matches!(contrastive_from_scores(&[], &[0.3], 0.07), Err(GateError::InvalidArgument(_))));
}

#[test]
fn contrastive_matches_straight_line_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let hub = unit(&mut rng, 16);
        let pos: Vec<Vec<f64>> = (0..2).map(|_| unit(&mut rng, 16)).collect();
        let neg: Vec<Vec<f64>> = (0..3).map(|_| unit(&mut rng, 16)).collect();
        let tau = 0.07;
        let cos = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut denom = 0.0;
        for x in pos.iter().chain(&neg) {
            denom += (cos(&hub, x) / tau).exp();
        }
        let mut want = 0.0;
        for p in &pos {
            want -= ((cos(&hub, p) / tau).exp() / denom).ln();
        }
        let got = contrastive_loss(&hub, &pos, &neg, tau).unwrap();
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        assert!(got >= 0.0);

        let mut shuffled = neg.clone();
        shuffled.shuffle(&mut rng);
        let again = contrastive_loss(&hub, &pos, &shuffled, tau).unwrap();
        assert!((got - again).abs() < 1e-6);
    }
}

#[test]
fn lone_positive_has_zero_loss_and_gradient() {
    let mut problem = GradProblem::random(desk_shape(), 0.07, 2, 1, 6, 1).unwrap();
    problem.positives = vec![vec![0], vec![3]];
    problem.negatives = vec![vec![], vec![]];
    let eval = batch_eval(&problem.params, &problem.examples(), &problem.query_refs(), true).unwrap();
    assert_eq!(eval.loss, 0.0);
    assert!(eval.grad.unwrap().iter().all(|&g| g == 0.0));
}

#[test]
fn gradient_check_single_token() {
    for seed in 0..3 {
        for tau in [0.07, 0.035] {
            let problem = GradProblem::random(desk_shape(), tau, 3, 1, 8, seed).unwrap();
            let r = check_gradients(&problem, 1e-3, 1e-4).unwrap();
            assert!(r.passes(1e-4), "seed {seed} tau {tau}: {r:?}");
            assert!(r.skipped * 20 < problem.params.len(), "too many kinked coordinates: {r:?}");
        }
    }
}

#[test]
fn gradient_check_multi_token_attention() {
    // the softmax path is steeper, so the difference quotient uses a finer
    // step to keep its own truncation error under the tolerance
    for seed in 0..3 {
        let problem = GradProblem::random(desk_shape(), 0.07, 3, 3, 8, seed).unwrap();
        let r = check_gradients(&problem, 1e-4, 1e-4).unwrap();
        assert!(r.passes(1e-4), "seed {seed}: {r:?}");
        let wk = r.tensor_errors.iter().find(|(n, _)| n == "w_k[0]").unwrap();
        assert!(wk.1 < 1e-4);
    }
}

#[test]
fn batch_eval_checks_indices() {
    let problem = GradProblem::random(desk_shape(), 0.07, 1, 1, 6, 0).unwrap();
    let queries = problem.query_refs();
    let mut ex = problem.examples();
    ex[0].positives = vec![99];
    assert!(batch_eval(&problem.params, &ex, &queries, false).is_err());
    ex[0].positives.clear();
    assert!(batch_eval(&problem.params, &ex, &queries, false).is_err());
    let none: Vec<HubExample<'_>> = Vec::new();
    assert!(batch_eval(&problem.params, &none, &queries, false).is_err());
}

fn snapshot_bytes(p: &TwoTowerParams) -> Vec<u8> {
    p.to_bytes().unwrap()
}

#[test]
fn parameter_snapshot_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.gttw");
    let params = TwoTowerParams::init(desk_shape(), 0.07, 8).unwrap();
    params.save(&path).unwrap();
    let back = TwoTowerParams::load(&path).unwrap();
    assert_eq!(back.shape, params.shape);
    assert_eq!(back.data, params.data);
    assert_eq!(snapshot_bytes(&back), snapshot_bytes(&params));

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(TwoTowerParams::load(&path), Err(GateError::Format { .. })));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(TwoTowerParams::load(&path), Err(GateError::Format { offset: 0, .. })));
    let mut nan = bytes;
    let n = nan.len();
    nan[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
    std::fs::write(&path, &nan).unwrap();
    assert!(matches!(TwoTowerParams::load(&path), Err(GateError::Format { .. })));
}

/// Two hubs at blob centers, queries drawn from the blobs, each hub's
/// positives from its own blob and negatives from the other.
struct RoutingTask {
    dataset: VectorDataset,
    topo: VectorDataset,
    queries: VectorDataset,
    samples: SampleQueues,
}

fn routing_task(per_side: usize, seed: u64) -> RoutingTask {
    let dataset = common::two_blobs(200, 16, 3.0, seed);
    let queries = common::two_blobs(per_side, 16, 3.0, seed + 100);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topo = VectorDataset::from_rows(8, &[gauss_row(&mut rng, 8), gauss_row(&mut rng, 8)]).unwrap();
    let a: Vec<(u32, u32)> = (0..per_side as u32).map(|q| (q, 1)).collect();
    let b: Vec<(u32, u32)> = (per_side as u32..2 * per_side as u32).map(|q| (q, 1)).collect();
    let samples = SampleQueues {
        t_pos: 3,
        t_neg: 15,
        hubs: vec![0, 200],
        queues: vec![HubQueue { positives: a.clone(), negatives: b.clone() }, HubQueue { positives: b, negatives: a }],
        unreachable_hubs: vec![],
    };
    RoutingTask { dataset, topo, queries, samples }
}

fn small_shape() -> ModelShape {
    ModelShape { d_p: 16, d_u: 8, d_k: 8, heads: 2, d_f: 16, hub_hidden: vec![32], query_hidden: vec![32], latent: 16 }
}

#[test]
fn zero_learning_rate_is_a_no_op() {
    let task = routing_task(10, 1);
    let mut params = TwoTowerParams::init(small_shape(), 0.07, 2).unwrap();
    let before = params.clone();
    let cfg = TrainConfig { lr: 0.0, epochs: 4, batch_size: 1, ..Default::default() };
    let report = train(&mut params, &task.dataset, &task.topo, &task.queries, &task.samples, &cfg).unwrap();
    assert_eq!(params.data, before.data);
    assert!(report.epoch_losses.windows(2).all(|w| w[0] == w[1]), "{:?}", report.epoch_losses);
}

#[test]
fn training_is_deterministic_and_learns() {
    let task = routing_task(30, 2);
    let run = || {
        let mut params = TwoTowerParams::init(small_shape(), 0.07, 5).unwrap();
        let cfg = TrainConfig { lr: 1e-3, epochs: 15, batch_size: 2, seed: 3, ..Default::default() };
        let r = train(&mut params, &task.dataset, &task.topo, &task.queries, &task.samples, &cfg).unwrap();
        (params, r)
    };
    let (p1, r1) = run();
    let (p2, r2) = run();
    assert_eq!(r1.epoch_losses, r2.epoch_losses);
    assert_eq!(p1.data, p2.data);
    assert!(r1.epoch_losses.last() < r1.epoch_losses.first(), "{:?}", r1.epoch_losses);
    assert!(p1.data.iter().all(|&x| x == x as f32 as f64));
}

#[test]
fn hubs_without_positives_are_excluded() {
    let mut task = routing_task(10, 3);
    task.samples.queues[1].positives.clear();
    let mut params = TwoTowerParams::init(small_shape(), 0.07, 5).unwrap();
    let cfg = TrainConfig { epochs: 2, ..Default::default() };
    let r = train(&mut params, &task.dataset, &task.topo, &task.queries, &task.samples, &cfg).unwrap();
    assert_eq!(r.excluded_hubs, vec![1]);

    task.samples.queues[0].positives.clear();
    let err = train(&mut params, &task.dataset, &task.topo, &task.queries, &task.samples, &cfg).unwrap_err();
    assert!(matches!(err, GateError::Config(_)));
}

#[test]
fn train_rejects_bad_config() {
    let task = routing_task(10, 4);
    let mut params = TwoTowerParams::init(small_shape(), 0.07, 5).unwrap();
    for cfg in [
        TrainConfig { lr: -1.0, ..Default::default() },
        TrainConfig { lr: f64::NAN, ..Default::default() },
        TrainConfig { epochs: 0, ..Default::default() },
        TrainConfig { beta1: 1.0, ..Default::default() },
    ] {
        let err = train(&mut params, &task.dataset, &task.topo, &task.queries, &task.samples, &cfg).unwrap_err();
        assert!(matches!(err, GateError::Config(_)), "{cfg:?}");
    }
}

#[test]
fn latent_table_is_unit_norm_and_round_trips() {
    let task = routing_task(10, 5);
    let params = TwoTowerParams::init(small_shape(), 0.07, 6).unwrap();
    let table = HubLatentTable::compute(&params, &task.dataset, &task.samples.hubs, &task.topo).unwrap();
    assert_eq!(table.len(), 2);
    for z in table.latents.iter() {
        let n: f64 = z.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-5);
    }
    let dir = tempfile::tempdir().unwrap();
    let (lp, fp) = (dir.path().join("lat.fvecs"), dir.path().join("fus.fvecs"));
    table.save(&lp, &fp).unwrap();
    assert_eq!(HubLatentTable::load(&lp, &fp).unwrap(), table);
    assert!(HubLatentTable::compute(&params, &task.dataset, &[0], &task.topo).is_err());
}
