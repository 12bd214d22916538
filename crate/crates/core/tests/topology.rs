use gate_core::graph::{build_knn_graph, build_nsg, NsgParams, ProximityGraph};
use gate_core::hubs::HubSet;
use gate_core::topology::{
    budget_from, sample_budget, sample_subgraph, topology_features, SampledSubgraph, SubgraphEmbedder, WlHashEmbedder,
};
use gate_core::VectorDataset;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_dataset(n: usize, dim: usize, seed: u64) -> VectorDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    VectorDataset::new(dim, data).unwrap()
}

fn nsg(n: usize, seed: u64) -> (VectorDataset, ProximityGraph) {
    let ds = random_dataset(n, 8, seed);
    let knn = build_knn_graph(&ds, 16).unwrap();
    let b = build_nsg(&ds, &knn, NsgParams { l_build: 32, r_deg: 24, c_pool: 128 }).unwrap();
    (ds, b.graph)
}

/// Replays every invariant of a sampled subgraph against its source graph.
fn check_invariants(g: &ProximityGraph, sub: &SampledSubgraph, h: usize) {
    assert_eq!(sub.nodes[0], sub.hub);
    assert_eq!(sub.hop_of[0], 0);
    assert_eq!(sub.nodes.len(), sub.hop_of.len());
    assert!(sub.max_hop() <= h);
    let (min, max) = g.degree_range();
    let mut out = std::collections::HashMap::<u32, usize>::new();
    for &(a, b) in &sub.edges {
        assert!(g.has_edge(a as usize, b), "edge {a}->{b} not in graph");
        assert!(sub.hop(a).is_some() && sub.hop(b).is_some());
        assert!(sub.hop(a).unwrap() < h, "expanded a node at depth h");
        *out.entry(a).or_default() += 1;
    }
    for (&v, &count) in &out {
        let deg = g.neighbors(v as usize).len();
        let budget = budget_from(min, max, deg);
        assert_eq!(budget, sample_budget(g, v as usize).unwrap());
        assert!(count <= budget && budget <= deg, "node {v}: {count} sampled, budget {budget}, degree {deg}");
    }
}

#[test]
fn budget_hand_cases() {
    // degrees 2, 8, 4 on a small hand-made graph
    let adj = vec![
        vec![1, 2],
        vec![0, 2, 3, 4, 5, 6, 7, 8],
        vec![0, 1, 3, 4],
        vec![0, 1],
        vec![0, 1],
        vec![0, 1],
        vec![0, 1],
        vec![0, 1],
        vec![0, 1],
    ];
    let g = ProximityGraph::new(adj, 8).unwrap();
    assert_eq!(sample_budget(&g, 2).unwrap(), 1);
    assert_eq!(sample_budget(&g, 1).unwrap(), 2);
    assert!(sample_budget(&g, 9).is_err());
    let regular = ProximityGraph::complete(5);
    assert_eq!(sample_budget(&regular, 3).unwrap(), 4);
}

#[test]
fn path_walk_from_end() {
    // gaps shrink along the path so each node's nearest neighbor is ahead
    let ds = VectorDataset::new(1, vec![0.0, 4.0, 6.0, 7.0, 7.5]).unwrap();
    let g = ProximityGraph::path(5);
    let sub = sample_subgraph(&g, &ds, 0, 2).unwrap();
    assert_eq!(sub.nodes, vec![0, 1, 2]);
    assert_eq!(sub.hop_of, vec![0, 1, 2]);
    assert_eq!(sub.edges, vec![(0, 1), (1, 2)]);
    check_invariants(&g, &sub, 2);
}

#[test]
fn unit_budget_takes_only_nearest() {
    // star-ish graph where min/max degree ratio forces x = 1 everywhere
    let ds = VectorDataset::new(1, vec![0.0, 1.0, 3.0, 6.0]).unwrap();
    let g = ProximityGraph::new(vec![vec![1, 2, 3], vec![0], vec![0], vec![0]], 3).unwrap();
    let sub = sample_subgraph(&g, &ds, 0, 1).unwrap();
    assert_eq!(sub.edges, vec![(0, 1)]);
}

#[test]
fn near_and_far_split() {
    // regular complete graph: x = deg = 4 → 2 nearest + 2 farthest
    let ds = VectorDataset::new(1, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    let adj: Vec<Vec<u32>> = (0..6u32)
        .map(|i| {
            let mut v: Vec<u32> = (0..6).filter(|&j| j != i).collect();
            v.truncate(4);
            if i >= 4 {
                v = vec![0, 1, 2, 3];
            }
            v
        })
        .collect();
    let g = ProximityGraph::new(adj, 4).unwrap();
    let sub = sample_subgraph(&g, &ds, 0, 1).unwrap();
    let mut picked: Vec<u32> = sub.edges.iter().map(|e| e.1).collect();
    picked.sort();
    assert_eq!(picked, vec![1, 2, 3, 4]);
    let sub = sample_subgraph(&g, &ds, 5, 1).unwrap();
    // neighbors 0..4 at distances 5,4,3,2: nearest 3,2 and farthest 0,1
    let mut picked: Vec<u32> = sub.edges.iter().map(|e| e.1).collect();
    picked.sort();
    assert_eq!(picked, vec![0, 1, 2, 3]);
}

#[test]
fn nsg_replay_invariants() {
    let (ds, g) = nsg(2000, 4);
    for hub in (0..2000).step_by(97) {
        let sub = sample_subgraph(&g, &ds, hub, 3).unwrap();
        check_invariants(&g, &sub, 3);
    }
    assert!(sample_subgraph(&g, &ds, 5000, 3).is_err());
    assert!(sample_subgraph(&g, &ds, 1, 0).is_err());
}

fn relabel(sub: &SampledSubgraph, offset: u32, rev: bool) -> SampledSubgraph {
    let n = sub.nodes.len() as u32;
    let map = |id: u32| {
        let i = sub.nodes.iter().position(|&x| x == id).unwrap() as u32;
        offset + if rev { n - 1 - i } else { i * 3 }
    };
    SampledSubgraph {
        hub: map(sub.hub),
        nodes: sub.nodes.iter().map(|&x| map(x)).collect(),
        hop_of: sub.hop_of.clone(),
        edges: sub.edges.iter().map(|&(a, b)| (map(a), map(b))).collect(),
    }
}

#[test]
fn embedding_contracts() {
    let e = WlHashEmbedder::default();
    let single = SampledSubgraph { hub: 7, nodes: vec![7], hop_of: vec![0], edges: vec![] };
    let v = e.embed(&single);
    assert_eq!(v.len(), 64);
    assert_eq!(v, e.embed(&SampledSubgraph { hub: 99, nodes: vec![99], hop_of: vec![0], edges: vec![] }));
    let norm: f32 = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    assert!((norm - 1.0).abs() < 1e-6);

    let e2 = WlHashEmbedder::new(64, 2).unwrap();
    let path = SampledSubgraph { hub: 0, nodes: vec![0, 1, 2], hop_of: vec![0, 1, 2], edges: vec![(0, 1), (1, 2)] };
    let tri =
        SampledSubgraph { hub: 0, nodes: vec![0, 1, 2], hop_of: vec![0, 1, 1], edges: vec![(0, 1), (1, 2), (2, 0)] };
    assert_ne!(e2.embed(&path), e2.embed(&tri));
    assert!(WlHashEmbedder::new(0, 2).is_err());
}

#[test]
fn isomorphic_subgraphs_embed_identically() {
    let (ds, g) = nsg(1000, 6);
    let e = WlHashEmbedder::default();
    for hub in [0u32, 17, 400, 999] {
        let sub = sample_subgraph(&g, &ds, hub, 4).unwrap();
        let base = e.embed(&sub);
        assert_eq!(base, e.embed(&relabel(&sub, 10_000, false)));
        assert_eq!(base, e.embed(&relabel(&sub, 3, true)));
        let norm: f64 = base.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }
}

#[test]
fn feature_table_aligned_with_hubs() {
    let (ds, g) = nsg(800, 2);
    let hubs = HubSet::from_ids(vec![5, 100, 3, 700]).unwrap();
    let e = WlHashEmbedder::new(32, 3).unwrap();
    let table = topology_features(&g, &ds, &hubs, 3, &e).unwrap();
    assert_eq!(table.len(), 4);
    assert_eq!(table.dim(), 32);
    for (i, &hub) in hubs.ids.iter().enumerate() {
        let sub = sample_subgraph(&g, &ds, hub, 3).unwrap();
        assert_eq!(table.get(i), e.embed(&sub).as_slice());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn invariants_hold_on_random_graphs(seed in any::<u64>(), h in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 150;
        let ds = random_dataset(n, 4, seed ^ 1);
        let adj: Vec<Vec<u32>> = (0..n)
            .map(|i| {
                let deg = rng.random_range(1..8);
                let mut v: Vec<u32> = rand::seq::index::sample(&mut rng, n - 1, deg)
                    .into_iter()
                    .map(|j| if j >= i { j as u32 + 1 } else { j as u32 })
                    .collect();
                v.sort();
                v
            })
            .collect();
        let g = ProximityGraph::new(adj, 8).unwrap();
        let hub = rng.random_range(0..n as u32);
        let sub = sample_subgraph(&g, &ds, hub, h).unwrap();
        check_invariants(&g, &sub, h);
    }
}
