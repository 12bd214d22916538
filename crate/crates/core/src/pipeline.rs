//! Staged, resumable pipeline over a working directory.
//!
//! Every stage reads the artifacts of earlier stages, writes its own, and
//! leaves a stamp: a SHA-256 over the config keys it depends on and the
//! bytes of its inputs. Rerunning a stage whose stamp still matches and
//! whose outputs exist does nothing.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::bench::{compute_ground_truth, run_bench, BenchInputs, BenchReport, Strategy};
use crate::dataset::VectorDataset;
use crate::error::{GateError, Result};
use crate::graph::{build_knn_graph, build_nsg, NsgParams, ProximityGraph};
use crate::hubs::{extract_hub_nodes, hbkm, HbkmParams, HubSet, Lambda};
use crate::io::{load_fvecs, load_ivecs, read_file, save_fvecs, save_ivecs, write_file};
use crate::model::{train, HubLatentTable, ModelShape, TrainConfig, TwoTowerParams};
use crate::navigation::{parse_manifest, GateIndex, MANIFEST_FILE};
use crate::sampling::{generate_samples, SampleParams, SampleQueues};
use crate::synth::{gen_synthetic, SyntheticConfig};
use crate::topology::{topology_features, WlHashEmbedder};

/// Comma-separated list of sizes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SizeList(pub Vec<usize>);

impl FromStr for SizeList {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.split(',')
            .map(|x| x.trim().parse::<usize>().map_err(|e| format!("{x:?}: {e}")))
            .collect::<std::result::Result<_, _>>()
            .map(SizeList)
    }
}

impl fmt::Display for SizeList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

/// Comma-separated strategy names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrategyList(pub Vec<Strategy>);

impl FromStr for StrategyList {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.split(',')
            .map(|x| x.trim().parse::<Strategy>().map_err(|e| e.to_string()))
            .collect::<std::result::Result<_, _>>()
            .map(StrategyList)
    }
}

impl fmt::Display for StrategyList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = self.0.iter().map(|s| s.name()).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for Lambda {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "auto" {
            return Ok(Lambda::Auto);
        }
        s.parse::<f64>().map(Lambda::Fixed).map_err(|e| format!("{s:?}: {e}"))
    }
}

impl fmt::Display for Lambda {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Lambda::Auto => f.write_str("auto"),
            Lambda::Fixed(v) => write!(f, "{v}"),
        }
    }
}

macro_rules! pipeline_config {
    ($( $(#[$doc:meta])* $field:ident : $ty:ty = $default:expr ),* $(,)?) => {
        /// Every hyperparameter of every stage.
        #[derive(Debug, Clone, PartialEq)]
        pub struct PipelineConfig {
            $( $(#[$doc])* pub $field: $ty, )*
        }

        impl Default for PipelineConfig {
            fn default() -> Self {
                Self { $( $field: $default, )* }
            }
        }

        impl PipelineConfig {
            pub const KEYS: &'static [&'static str] = &[$( stringify!($field) ),*];

            /// Parses `value` into the field named `key`.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $( stringify!($field) => {
                        self.$field = value.trim().parse::<$ty>().map_err(|e| {
                            GateError::Config(format!("bad value {value:?} for `{key}`: {e}"))
                        })?;
                    } )*
                    _ => return Err(GateError::Config(format!("unknown config key `{key}`"))),
                }
                Ok(())
            }

            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $( stringify!($field) => Some(self.$field.to_string()), )*
                    _ => None,
                }
            }
        }
    };
}

pipeline_config! {
    seed: u64 = 7,
    n_points: usize = 10_000,
    /// Total generated queries; split into historical and evaluation sets.
    n_queries: usize = 5_000,
    dim: usize = 32,
    n_clusters: usize = 50,
    spread: f32 = 1.0,
    center_scale: f32 = 1.5,
    ood_shift: f32 = 0.0,
    /// Fraction of generated queries held out for evaluation.
    eval_fraction: f64 = 0.2,
    /// Neighbors per query in the ground truth and the benchmark.
    k: usize = 10,
    knn_k: usize = 32,
    l_build: usize = 50,
    r_deg: usize = 50,
    c_pool: usize = 512,
    n_c: usize = 512,
    k_branch: usize = 8,
    lambda: Lambda = Lambda::Auto,
    hbkm_iters: usize = 10,
    h: usize = 5,
    d_u: usize = 64,
    wl_iters: usize = 3,
    t_pos: usize = 3,
    t_neg: usize = 15,
    hop_cap: usize = 2000,
    max_queue: usize = 64,
    d_k: usize = 32,
    heads: usize = 4,
    d_f: usize = 128,
    hub_hidden: SizeList = SizeList(vec![256, 256]),
    query_hidden: SizeList = SizeList(vec![256, 256]),
    latent: usize = 128,
    tau: f64 = 0.07,
    lr: f64 = 5e-5,
    epochs: usize = 30,
    batch_size: usize = 1024,
    negatives: usize = 16,
    s: usize = 16,
    beam: usize = 8,
    ls_sweep: SizeList = SizeList(vec![10, 12, 14, 16, 20, 24, 28, 32, 40, 48, 64, 80, 96, 128]),
    strategies: StrategyList = StrategyList(Strategy::ALL.to_vec()),
}

impl PipelineConfig {
    /// Parses `key = value` lines over the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (k, v) = body
                .split_once('=')
                .ok_or_else(|| GateError::Config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(k.trim(), v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = read_file(path)?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| GateError::format(path, e.valid_up_to() as u64, "config is not UTF-8"))?;
        Self::parse(text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in Self::KEYS {
            let _ = writeln!(s, "{key} = {}", self.get(key).expect("listed key"));
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GateError::Config(m));
        if self.dim == 0 || self.n_points == 0 || self.n_clusters == 0 || self.n_clusters > self.n_points {
            return bad("need positive dim and 1 ≤ n_clusters ≤ n_points".into());
        }
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return bad(format!("eval_fraction {} must be in (0, 1)", self.eval_fraction));
        }
        let n_eval = self.eval_count();
        if n_eval == 0 || n_eval == self.n_queries {
            return bad("query split leaves one side empty".into());
        }
        if self.k == 0 || self.k > self.n_points || self.knn_k == 0 || self.knn_k >= self.n_points {
            return bad("k and knn_k must be in 1..n_points".into());
        }
        if self.l_build == 0 || self.r_deg == 0 || self.c_pool == 0 {
            return bad("l_build, r_deg and c_pool must be positive".into());
        }
        if self.n_c == 0 || self.n_c > self.n_points || self.k_branch < 2 {
            return bad("need 1 ≤ n_c ≤ n_points and k_branch ≥ 2".into());
        }
        if self.h == 0 || self.d_u == 0 {
            return bad("h and d_u must be positive".into());
        }
        if self.t_pos >= self.t_neg || self.hop_cap == 0 || self.max_queue == 0 {
            return bad("need t_pos < t_neg and positive hop_cap, max_queue".into());
        }
        self.model_shape().validate()?;
        TwoTowerParams::zeros(self.model_shape(), self.tau)?;
        self.train_config().validate()?;
        if self.n_c > 1 && (self.s == 0 || self.s > self.n_c / 4) {
            return bad(format!("navigation out-degree s = {} must be in 1..={}", self.s, self.n_c / 4));
        }
        if self.beam == 0 {
            return bad("beam must be positive".into());
        }
        if self.ls_sweep.0.is_empty() || self.ls_sweep.0.iter().any(|&l| l < self.k) {
            return bad(format!("every l_s in the sweep must be at least k = {}", self.k));
        }
        if self.strategies.0.is_empty() {
            return bad("no benchmark strategies".into());
        }
        Ok(())
    }

    pub fn eval_count(&self) -> usize {
        (self.n_queries as f64 * self.eval_fraction).round() as usize
    }

    pub fn synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            n_points: self.n_points,
            n_queries: self.n_queries,
            dim: self.dim,
            n_clusters: self.n_clusters,
            spread: self.spread,
            center_scale: self.center_scale,
            ood_shift: self.ood_shift,
            seed: self.seed,
        }
    }

    pub fn nsg_params(&self) -> NsgParams {
        NsgParams { l_build: self.l_build, r_deg: self.r_deg, c_pool: self.c_pool }
    }

    pub fn hbkm_params(&self) -> HbkmParams {
        HbkmParams {
            k_branch: self.k_branch,
            n_c: self.n_c,
            lambda: self.lambda,
            max_iter: self.hbkm_iters,
            seed: self.seed,
        }
    }

    pub fn sample_params(&self) -> SampleParams {
        SampleParams { t_pos: self.t_pos, t_neg: self.t_neg, hop_cap: self.hop_cap, max_queue: self.max_queue }
    }

    pub fn model_shape(&self) -> ModelShape {
        ModelShape {
            d_p: self.dim,
            d_u: self.d_u,
            d_k: self.d_k,
            heads: self.heads,
            d_f: self.d_f,
            hub_hidden: self.hub_hidden.0.clone(),
            query_hidden: self.query_hidden.0.clone(),
            latent: self.latent,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            negatives_per_hub: self.negatives,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Gen,
    GroundTruth,
    BuildGraph,
    ExtractHubs,
    TopoFeatures,
    MineSamples,
    Train,
    Assemble,
    Bench,
}

pub const BASE: &str = "base.fvecs";
pub const HISTORY: &str = "history.fvecs";
pub const QUERIES: &str = "queries.fvecs";
pub const TRUTH: &str = "truth.ivecs";
pub const GRAPH: &str = "graph.pgrf";
pub const GRAPH_META: &str = "graph.meta";
pub const HUBS: &str = "hubs.txt";
pub const TOPO: &str = "topo.fvecs";
pub const SAMPLES: &str = "samples.txt";
pub const MODEL: &str = "model.gttw";
pub const LATENTS: &str = "latents.fvecs";
pub const FUSION: &str = "fusion.fvecs";
pub const TRAIN_LOG: &str = "train_loss.csv";
pub const INDEX_DIR: &str = "index";
pub const BENCH_CSV: &str = "bench.csv";
pub const RESULTS_DIR: &str = "results";
pub const RESOLVED_CONFIG: &str = "config.resolved";

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Gen,
        Stage::GroundTruth,
        Stage::BuildGraph,
        Stage::ExtractHubs,
        Stage::TopoFeatures,
        Stage::MineSamples,
        Stage::Train,
        Stage::Assemble,
        Stage::Bench,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Gen => "gen",
            Stage::GroundTruth => "ground-truth",
            Stage::BuildGraph => "build-graph",
            Stage::ExtractHubs => "extract-hubs",
            Stage::TopoFeatures => "topo-features",
            Stage::MineSamples => "mine-samples",
            Stage::Train => "train",
            Stage::Assemble => "assemble",
            Stage::Bench => "bench",
        }
    }

    /// Config keys whose values change this stage's outputs.
    pub fn keys(self) -> &'static [&'static str] {
        match self {
            Stage::Gen => &[
                "seed",
                "n_points",
                "n_queries",
                "dim",
                "n_clusters",
                "spread",
                "center_scale",
                "ood_shift",
                "eval_fraction",
            ],
            Stage::GroundTruth => &["k"],
            Stage::BuildGraph => &["knn_k", "l_build", "r_deg", "c_pool"],
            Stage::ExtractHubs => &["n_c", "k_branch", "lambda", "hbkm_iters", "seed"],
            Stage::TopoFeatures => &["h", "d_u", "wl_iters"],
            Stage::MineSamples => &["t_pos", "t_neg", "hop_cap", "max_queue"],
            Stage::Train => &[
                "d_k",
                "heads",
                "d_f",
                "hub_hidden",
                "query_hidden",
                "latent",
                "tau",
                "lr",
                "epochs",
                "batch_size",
                "negatives",
                "seed",
            ],
            Stage::Assemble => &["s", "beam"],
            Stage::Bench => &["ls_sweep", "k", "strategies", "seed"],
        }
    }

    pub fn inputs(self) -> &'static [&'static str] {
        match self {
            Stage::Gen => &[],
            Stage::GroundTruth => &[BASE, QUERIES],
            Stage::BuildGraph => &[BASE],
            Stage::ExtractHubs => &[BASE],
            Stage::TopoFeatures => &[BASE, GRAPH, HUBS],
            Stage::MineSamples => &[BASE, GRAPH, HUBS, HISTORY],
            Stage::Train => &[BASE, TOPO, HISTORY, SAMPLES],
            Stage::Assemble => &[GRAPH, HUBS, MODEL, LATENTS, FUSION],
            Stage::Bench => &[BASE, QUERIES, TRUTH, GRAPH, GRAPH_META],
        }
    }

    pub fn outputs(self) -> &'static [&'static str] {
        match self {
            Stage::Gen => &[BASE, HISTORY, QUERIES],
            Stage::GroundTruth => &[TRUTH],
            Stage::BuildGraph => &[GRAPH, GRAPH_META],
            Stage::ExtractHubs => &[HUBS],
            Stage::TopoFeatures => &[TOPO],
            Stage::MineSamples => &[SAMPLES],
            Stage::Train => &[MODEL, LATENTS, FUSION, TRAIN_LOG],
            Stage::Assemble => &[INDEX_DIR],
            Stage::Bench => &[BENCH_CSV],
        }
    }

    /// The stage that writes `artifact`.
    pub fn producer(artifact: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|s| s.outputs().contains(&artifact))
    }
}

impl FromStr for Stage {
    type Err = GateError;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| GateError::Config(format!("unknown stage {s:?}")))
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    /// Stamp matched and outputs were present.
    UpToDate,
}

/// A config bound to a working directory.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub dir: PathBuf,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, dir: impl Into<PathBuf>) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, dir: dir.into() })
    }

    pub fn path(&self, artifact: &str) -> PathBuf {
        self.dir.join(artifact)
    }

    fn stamp_path(&self, stage: Stage) -> PathBuf {
        self.dir.join(".stamps").join(stage.name())
    }

    fn require(&self, artifact: &str) -> Result<PathBuf> {
        let p = self.path(artifact);
        if p.exists() {
            Ok(p)
        } else {
            Err(GateError::MissingArtifact {
                path: p,
                stage: Stage::producer(artifact).map_or("an earlier", Stage::name),
            })
        }
    }

    fn artifact_digest(&self, artifact: &str) -> Result<Vec<u8>> {
        let p = self.path(artifact);
        let mut h = Sha256::new();
        if p.is_dir() {
            let mut names: Vec<PathBuf> = std::fs::read_dir(&p)
                .map_err(|e| GateError::io(&p, e))?
                .map(|e| e.map(|e| e.path()).map_err(|err| GateError::io(&p, err)))
                .collect::<Result<_>>()?;
            names.sort();
            for f in names {
                h.update(f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
                h.update(read_file(&f)?);
            }
        } else {
            h.update(read_file(&p)?);
        }
        Ok(h.finalize().to_vec())
    }

    /// Digest of the stage's config keys and input bytes.
    pub fn stamp(&self, stage: Stage) -> Result<String> {
        let mut h = Sha256::new();
        h.update(stage.name());
        for key in stage.keys() {
            h.update(format!("\n{key}={}", self.config.get(key).expect("known key")));
        }
        let mut inputs: Vec<&str> = stage.inputs().to_vec();
        if stage == Stage::Bench && self.config.strategies.0.contains(&Strategy::Gate) {
            inputs.push(INDEX_DIR);
        }
        for input in inputs {
            self.require(input)?;
            h.update(format!("\n{input}:"));
            h.update(self.artifact_digest(input)?);
        }
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }

    /// True when the stage's outputs exist and its stamp matches.
    pub fn is_current(&self, stage: Stage) -> Result<bool> {
        if !stage.outputs().iter().all(|o| self.path(o).exists()) {
            return Ok(false);
        }
        let Ok(old) = std::fs::read_to_string(self.stamp_path(stage)) else {
            return Ok(false);
        };
        Ok(old.trim() == self.stamp(stage)?)
    }

    /// Runs `stage` unless it is current. The resolved config is written
    /// next to the outputs either way.
    pub fn run(&self, stage: Stage) -> Result<StageStatus> {
        std::fs::create_dir_all(&self.dir).map_err(|e| GateError::io(&self.dir, e))?;
        write_file(&self.path(RESOLVED_CONFIG), self.config.to_text().as_bytes())?;
        if self.is_current(stage)? {
            log::info!("{stage}: up to date");
            return Ok(StageStatus::UpToDate);
        }
        log::info!("{stage}: running");
        match stage {
            Stage::Gen => self.gen()?,
            Stage::GroundTruth => self.ground_truth()?,
            Stage::BuildGraph => self.build_graph()?,
            Stage::ExtractHubs => self.extract_hubs()?,
            Stage::TopoFeatures => self.topo_features()?,
            Stage::MineSamples => self.mine_samples()?,
            Stage::Train => self.train()?,
            Stage::Assemble => self.assemble()?,
            Stage::Bench => {
                self.bench()?;
            }
        }
        let stamp = self.stamp(stage)?;
        let sp = self.stamp_path(stage);
        if let Some(parent) = sp.parent() {
            std::fs::create_dir_all(parent).map_err(|e| GateError::io(parent, e))?;
        }
        write_file(&sp, stamp.as_bytes())?;
        Ok(StageStatus::Ran)
    }

    /// Runs every stage in order.
    pub fn run_all(&self) -> Result<Vec<(Stage, StageStatus)>> {
        Stage::ALL.into_iter().map(|s| Ok((s, self.run(s)?))).collect()
    }

    fn load_fvecs(&self, artifact: &str) -> Result<VectorDataset> {
        load_fvecs(self.require(artifact)?)
    }

    fn gen(&self) -> Result<()> {
        let syn = gen_synthetic(&self.config.synthetic())?;
        let mut order: Vec<usize> = (0..syn.queries.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x5EED_5EED));
        let n_eval = self.config.eval_count();
        let (eval, history) = order.split_at(n_eval);
        let (mut eval, mut history) = (eval.to_vec(), history.to_vec());
        eval.sort_unstable();
        history.sort_unstable();
        save_fvecs(&syn.base, self.path(BASE))?;
        save_fvecs(&syn.queries.select(&history), self.path(HISTORY))?;
        save_fvecs(&syn.queries.select(&eval), self.path(QUERIES))
    }

    fn ground_truth(&self) -> Result<()> {
        let base = self.load_fvecs(BASE)?;
        let queries = self.load_fvecs(QUERIES)?;
        let truth = compute_ground_truth(&base, &queries, self.config.k)?;
        let rows: Vec<Vec<i32>> = truth.iter().map(|r| r.ids.iter().map(|&i| i as i32).collect()).collect();
        save_ivecs(&rows, self.path(TRUTH))
    }

    fn build_graph(&self) -> Result<()> {
        let base = self.load_fvecs(BASE)?;
        let knn = build_knn_graph(&base, self.config.knn_k)?;
        let nsg = build_nsg(&base, &knn, self.config.nsg_params())?;
        nsg.graph.save(self.path(GRAPH))?;
        let meta = format!("medoid = {}\nrepair_edges = {}\n", nsg.medoid, nsg.repair_edges.len());
        write_file(&self.path(GRAPH_META), meta.as_bytes())
    }

    /// Medoid recorded by the graph build.
    pub fn medoid(&self) -> Result<u32> {
        let p = self.require(GRAPH_META)?;
        parse_manifest(&p)?
            .get("medoid")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| GateError::format(&p, 0, "missing medoid"))
    }

    fn extract_hubs(&self) -> Result<()> {
        let base = self.load_fvecs(BASE)?;
        let assignment = hbkm(&base, &self.config.hbkm_params())?;
        extract_hub_nodes(&base, &assignment)?.save(self.path(HUBS))
    }

    fn topo_features(&self) -> Result<()> {
        let base = self.load_fvecs(BASE)?;
        let graph = ProximityGraph::load(self.require(GRAPH)?)?;
        let hubs = HubSet::load(self.require(HUBS)?)?;
        let embedder = WlHashEmbedder::new(self.config.d_u, self.config.wl_iters)?;
        let topo = topology_features(&graph, &base, &hubs, self.config.h, &embedder)?;
        save_fvecs(&topo, self.path(TOPO))
    }

    fn mine_samples(&self) -> Result<()> {
        let base = self.load_fvecs(BASE)?;
        let graph = ProximityGraph::load(self.require(GRAPH)?)?;
        let hubs = HubSet::load(self.require(HUBS)?)?;
        let history = self.load_fvecs(HISTORY)?;
        let samples = generate_samples(&graph, &base, &hubs, &history, &self.config.sample_params())?;
        log::info!(
            "{} positives, {} negatives, {} hubs without reachable queries",
            samples.total_positives(),
            samples.total_negatives(),
            samples.unreachable_hubs.len()
        );
        samples.save(self.path(SAMPLES))
    }

    fn train(&self) -> Result<()> {
        let base = self.load_fvecs(BASE)?;
        let topo = self.load_fvecs(TOPO)?;
        let history = self.load_fvecs(HISTORY)?;
        let samples = SampleQueues::load(self.require(SAMPLES)?)?;
        let mut params = TwoTowerParams::init(self.config.model_shape(), self.config.tau, self.config.seed)?;
        let report = train(&mut params, &base, &topo, &history, &samples, &self.config.train_config())?;
        let table = HubLatentTable::compute(&params, &base, &samples.hubs, &topo)?;
        params.save(self.path(MODEL))?;
        table.save(self.path(LATENTS), self.path(FUSION))?;
        let mut log = String::from("epoch,loss\n");
        for (i, l) in report.epoch_losses.iter().enumerate() {
            let _ = writeln!(log, "{i},{l:.8}");
        }
        write_file(&self.path(TRAIN_LOG), log.as_bytes())
    }

    fn assemble(&self) -> Result<()> {
        let index = GateIndex::assemble(
            ProximityGraph::load(self.require(GRAPH)?)?,
            HubSet::load(self.require(HUBS)?)?,
            TwoTowerParams::load(self.require(MODEL)?)?,
            HubLatentTable::load(self.require(LATENTS)?, self.require(FUSION)?)?,
            self.config.s,
            self.config.beam,
        )?;
        let mut extra = BTreeMap::new();
        for key in PipelineConfig::KEYS {
            extra.insert(format!("config.{key}"), self.config.get(key).expect("listed key"));
        }
        index.save(self.path(INDEX_DIR), &extra)
    }

    /// Loads the assembled index.
    pub fn load_index(&self) -> Result<GateIndex> {
        let dir = self.path(INDEX_DIR);
        if !dir.join(MANIFEST_FILE).exists() {
            return Err(GateError::MissingArtifact { path: dir, stage: Stage::Assemble.name() });
        }
        Ok(GateIndex::load(dir)?.0)
    }

    /// Runs the benchmark, writes the CSV and the per-row result ids, and
    /// returns the report.
    pub fn bench(&self) -> Result<BenchReport> {
        let base = self.load_fvecs(BASE)?;
        let queries = self.load_fvecs(QUERIES)?;
        let truth: Vec<Vec<u32>> =
            load_ivecs(self.require(TRUTH)?)?.into_iter().map(|r| r.into_iter().map(|i| i as u32).collect()).collect();
        let graph = ProximityGraph::load(self.require(GRAPH)?)?;
        let medoid = self.medoid()?;
        let strategies = &self.config.strategies.0;
        let index = if strategies.contains(&Strategy::Gate) { Some(self.load_index()?) } else { None };
        let inputs = BenchInputs {
            dataset: &base,
            graph: &graph,
            medoid,
            index: index.as_ref(),
            queries: &queries,
            truth: &truth,
        };
        let report = run_bench(&inputs, strategies, &self.config.ls_sweep.0, self.config.k, self.config.seed)?;
        let results = self.path(RESULTS_DIR);
        std::fs::create_dir_all(&results).map_err(|e| GateError::io(&results, e))?;
        for (row, ids) in report.rows.iter().zip(&report.results) {
            let rows: Vec<Vec<i32>> = ids.iter().map(|r| r.iter().map(|&i| i as i32).collect()).collect();
            save_ivecs(&rows, results.join(format!("{}_l{}.ivecs", row.strategy, row.l_s)))?;
        }
        write_file(&self.path(BENCH_CSV), report.to_csv().as_bytes())?;
        Ok(report)
    }
}

/// Reads a benchmark CSV back into rows.
pub fn parse_bench_csv(path: &Path) -> Result<Vec<crate::bench::BenchRow>> {
    let bytes = read_file(path)?;
    let text = String::from_utf8_lossy(&bytes);
    let mut lines = text.lines();
    if lines.next() != Some(crate::bench::CSV_HEADER) {
        return Err(GateError::format(path, 0, "unexpected benchmark header"));
    }
    let mut offset = crate::bench::CSV_HEADER.len() as u64 + 1;
    let mut rows = Vec::new();
    for line in lines {
        let at = offset;
        offset += line.len() as u64 + 1;
        let f: Vec<&str> = line.split(',').collect();
        let bad = || GateError::format(path, at, format!("malformed row {line:?}"));
        if f.len() != 9 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad());
        rows.push(crate::bench::BenchRow {
            strategy: f[0].parse().map_err(|_| bad())?,
            l_s: int(f[1])?,
            k: int(f[2])?,
            recall: num(f[3])?,
            mean_hops: num(f[4])?,
            median_hops: num(f[5])?,
            dist_evals: num(f[6])?,
            qps: num(f[7])?,
            n_queries: int(f[8])?,
        });
    }
    Ok(rows)
}
