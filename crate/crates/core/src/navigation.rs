//! Hub-level navigation graph over learned latents and two-stage routing:
//! cosine best-first search among hubs, then the base proximity-graph
//! search from the chosen hub.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use crate::dataset::VectorDataset;
use crate::error::{GateError, Result};
use crate::graph::{greedy_search_with, ProximityGraph, SearchOutcome, SearchScratch};
use crate::hubs::HubSet;
use crate::io::{read_file, write_file};
use crate::model::{project_query, HubLatentTable, TwoTowerParams};

const NAV_MAGIC: &[u8; 4] = b"GNAV";

fn cosine(a: &[f32], b: &[f64]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let x = *x as f64;
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    let d = (aa * bb).sqrt();
    if d == 0.0 {
        0.0
    } else {
        (ab / d).clamp(-1.0, 1.0)
    }
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Ordering key for "more similar first, then smaller index".
fn by_similarity(a: &(f64, u32), b: &(f64, u32)) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Directed graph over hub indices; every hub links to its `s` most
/// cosine-similar other hubs, most similar first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NavigationGraph {
    pub s: usize,
    graph: ProximityGraph,
}

impl NavigationGraph {
    /// The trivial graph over a single hub.
    pub fn single() -> Self {
        Self { s: 0, graph: ProximityGraph::new(vec![Vec::new()], 0).expect("one isolated node is valid") }
    }

    pub fn hub_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn neighbors(&self, hub: usize) -> &[u32] {
        self.graph.neighbors(hub)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.graph.save_with_magic(path.as_ref(), NAV_MAGIC)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let graph = ProximityGraph::load_with_magic(path, NAV_MAGIC)?;
        let n = graph.node_count();
        let s = graph.max_degree();
        if graph.adjacency().iter().any(|a| a.len() != s.min(n.saturating_sub(1))) {
            return Err(GateError::format(path, 0, "navigation graph has uneven out-degrees"));
        }
        Ok(Self { s, graph })
    }
}

pub fn build_navigation_graph(latents: &VectorDataset, s: usize) -> Result<NavigationGraph> {
    let n = latents.len();
    if n < 2 {
        return Err(GateError::invalid("a navigation graph needs at least two hubs"));
    }
    if s == 0 || s >= n {
        return Err(GateError::invalid(format!("out-degree s = {s} must be in 1..{n}")));
    }
    let wide: Vec<Vec<f64>> = latents.iter().map(widen).collect();
    let adjacency: Vec<Vec<u32>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut scored: Vec<(f64, u32)> =
                (0..n).filter(|&j| j != i).map(|j| (cosine(latents.get(i), &wide[j]), j as u32)).collect();
            scored.sort_unstable_by(by_similarity);
            scored.truncate(s);
            scored.into_iter().map(|(_, j)| j).collect()
        })
        .collect();
    Ok(NavigationGraph { s, graph: ProximityGraph::new(adjacency, s)? })
}

/// Hub whose latent has the highest mean cosine to all other hub latents;
/// ties go to the smaller index.
pub fn select_start_hub(latents: &VectorDataset) -> Result<usize> {
    let n = latents.len();
    if n == 0 {
        return Err(GateError::invalid("no hub latents"));
    }
    let wide: Vec<Vec<f64>> = latents.iter().map(widen).collect();
    let means: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).filter(|&j| j != i).map(|j| cosine(latents.get(i), &wide[j])).sum::<f64>())
        .collect();
    let mut best = 0;
    for (i, m) in means.iter().enumerate() {
        if *m > means[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Result of routing one query through the navigation graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Route {
    pub hub_index: usize,
    /// Dataset id of the chosen hub.
    pub entry: u32,
    pub cosine: f64,
    /// Hub expansions.
    pub hops: usize,
    /// Latent similarity evaluations.
    pub evals: usize,
}

/// Best-first search maximizing cosine to `z` over the navigation graph,
/// keeping the `beam` most similar hubs seen. Returns the most similar hub
/// found.
pub fn route_latent(nav: &NavigationGraph, latents: &VectorDataset, z: &[f64], start: usize, beam: usize) -> Route {
    let n = nav.hub_count();
    let beam = beam.max(1);
    let mut seen = vec![false; n];
    let mut pool: Vec<(f64, u32, bool)> = vec![(cosine(latents.get(start), z), start as u32, false)];
    seen[start] = true;
    let (mut hops, mut evals) = (0, 1);
    while let Some(pos) = pool.iter().position(|e| !e.2) {
        pool[pos].2 = true;
        hops += 1;
        let v = pool[pos].1 as usize;
        for &u in nav.neighbors(v) {
            if std::mem::replace(&mut seen[u as usize], true) {
                continue;
            }
            evals += 1;
            let c = cosine(latents.get(u as usize), z);
            pool.push((c, u, false));
        }
        pool.sort_by(|a, b| by_similarity(&(a.0, a.1), &(b.0, b.1)));
        pool.truncate(beam);
    }
    let (cos, best, _) = pool[0];
    Route { hub_index: best as usize, entry: 0, cosine: cos, hops, evals }
}

/// Outcome of a two-stage search. `search.hops` is the total of both tiers.
#[derive(Debug, Clone, PartialEq)]
pub struct GateOutcome {
    pub search: SearchOutcome,
    pub route: Route,
    pub base_hops: usize,
}

/// Everything needed to route and search: the base graph, hubs, trained
/// parameters, hub latents and the navigation graph over them.
#[derive(Debug)]
pub struct GateIndex {
    pub base: ProximityGraph,
    pub hubs: HubSet,
    pub params: TwoTowerParams,
    pub latents: HubLatentTable,
    pub navigation: NavigationGraph,
    pub start_hub: usize,
    pub beam: usize,
    inferences: AtomicUsize,
}

impl GateIndex {
    /// Assembles an index, building the navigation graph with out-degree
    /// `s` (clamped to `hub_count − 1`).
    pub fn assemble(
        base: ProximityGraph,
        hubs: HubSet,
        params: TwoTowerParams,
        latents: HubLatentTable,
        s: usize,
        beam: usize,
    ) -> Result<Self> {
        let navigation = if hubs.len() == 1 {
            NavigationGraph::single()
        } else {
            build_navigation_graph(&latents.latents, s.min(hubs.len() - 1))?
        };
        let start_hub = select_start_hub(&latents.latents)?;
        Self::from_parts(base, hubs, params, latents, navigation, start_hub, beam)
    }

    pub fn from_parts(
        base: ProximityGraph,
        hubs: HubSet,
        params: TwoTowerParams,
        latents: HubLatentTable,
        navigation: NavigationGraph,
        start_hub: usize,
        beam: usize,
    ) -> Result<Self> {
        let n = hubs.len();
        if n == 0 {
            return Err(GateError::invalid("index needs at least one hub"));
        }
        if latents.len() != n || navigation.hub_count() != n {
            return Err(GateError::invalid(format!(
                "{n} hubs but {} latents and {} navigation nodes",
                latents.len(),
                navigation.hub_count()
            )));
        }
        if latents.latents.dim() != params.shape.latent {
            return Err(GateError::invalid("latent width differs from the model output"));
        }
        if let Some(&bad) = hubs.ids.iter().find(|&&id| id as usize >= base.node_count()) {
            return Err(GateError::invalid(format!("hub {bad} outside the base graph")));
        }
        if start_hub >= n {
            return Err(GateError::invalid(format!("start hub {start_hub} out of range")));
        }
        if beam == 0 {
            return Err(GateError::invalid("beam must be positive"));
        }
        Ok(Self { base, hubs, params, latents, navigation, start_hub, beam, inferences: AtomicUsize::new(0) })
    }

    /// Query-tower forwards run so far.
    pub fn inference_count(&self) -> usize {
        self.inferences.load(Ordering::Relaxed)
    }

    fn project(&self, q: &[f32]) -> Result<Vec<f64>> {
        self.inferences.fetch_add(1, Ordering::Relaxed);
        Ok(project_query(&self.params, q)?.latent)
    }

    /// Projects `q` and routes it to a hub.
    pub fn route_query(&self, q: &[f32], beam: usize) -> Result<Route> {
        let z = self.project(q)?;
        Ok(self.route_projected(&z, beam))
    }

    fn route_projected(&self, z: &[f64], beam: usize) -> Route {
        let mut r = route_latent(&self.navigation, &self.latents.latents, z, self.start_hub, beam);
        r.entry = self.hubs.ids[r.hub_index];
        r
    }

    /// Routes `q` with the index's beam, then searches the base graph from
    /// the chosen hub alone.
    pub fn search(&self, dataset: &VectorDataset, q: &[f32], l_s: usize, k: usize) -> Result<GateOutcome> {
        let mut scratch = SearchScratch::new(self.base.node_count());
        self.search_with(dataset, q, l_s, k, &mut scratch)
    }

    pub fn search_with(
        &self,
        dataset: &VectorDataset,
        q: &[f32],
        l_s: usize,
        k: usize,
        scratch: &mut SearchScratch,
    ) -> Result<GateOutcome> {
        dataset.check_query(q)?;
        if dataset.len() != self.base.node_count() {
            return Err(GateError::invalid("dataset and base graph sizes differ"));
        }
        let z = self.project(q)?;
        let route = self.route_projected(&z, self.beam);
        let mut search = greedy_search_with(&self.base, dataset, q, l_s, k, &[route.entry], scratch)?;
        let base_hops = search.hops;
        search.hops += route.hops;
        search.distance_evals += route.evals;
        Ok(GateOutcome { search, route, base_hops })
    }

    /// Writes the bundle directory: base graph, hubs, model, latents,
    /// navigation graph and a manifest of `extra` settings plus the index's
    /// own.
    pub fn save(&self, dir: impl AsRef<Path>, extra: &BTreeMap<String, String>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| GateError::io(dir, e))?;
        self.base.save(dir.join(BASE_FILE))?;
        self.hubs.save(dir.join(HUBS_FILE))?;
        self.params.save(dir.join(MODEL_FILE))?;
        self.latents.save(dir.join(LATENTS_FILE), dir.join(FUSION_FILE))?;
        self.navigation.save(dir.join(NAV_FILE))?;
        let mut manifest = extra.clone();
        manifest.insert("start_hub".into(), self.start_hub.to_string());
        manifest.insert("beam".into(), self.beam.to_string());
        manifest.insert("s".into(), self.navigation.s.to_string());
        manifest.insert("hub_count".into(), self.hubs.len().to_string());
        let mut text = String::new();
        for (k, v) in &manifest {
            let _ = writeln!(text, "{k} = {v}");
        }
        write_file(&dir.join(MANIFEST_FILE), text.as_bytes())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<(Self, BTreeMap<String, String>)> {
        let dir = dir.as_ref();
        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest = parse_manifest(&manifest_path)?;
        let get = |key: &str| -> Result<usize> {
            manifest
                .get(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| GateError::format(&manifest_path, 0, format!("manifest lacks a valid `{key}`")))
        };
        let index = Self::from_parts(
            ProximityGraph::load(dir.join(BASE_FILE))?,
            HubSet::load(dir.join(HUBS_FILE))?,
            TwoTowerParams::load(dir.join(MODEL_FILE))?,
            HubLatentTable::load(dir.join(LATENTS_FILE), dir.join(FUSION_FILE))?,
            NavigationGraph::load(dir.join(NAV_FILE))?,
            get("start_hub")?,
            get("beam")?,
        )?;
        Ok((index, manifest))
    }
}

pub const BASE_FILE: &str = "base.pgrf";
pub const HUBS_FILE: &str = "hubs.txt";
pub const MODEL_FILE: &str = "model.gttw";
pub const LATENTS_FILE: &str = "latents.fvecs";
pub const FUSION_FILE: &str = "fusion.fvecs";
pub const NAV_FILE: &str = "navigation.gnav";
pub const MANIFEST_FILE: &str = "manifest.txt";

/// `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_manifest(path: &Path) -> Result<BTreeMap<String, String>> {
    let bytes = read_file(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| GateError::format(path, e.valid_up_to() as u64, "not UTF-8"))?;
    let mut out = BTreeMap::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let at = offset;
        offset += line.len() as u64;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (k, v) = body
            .split_once('=')
            .ok_or_else(|| GateError::format(path, at, format!("expected `key = value`, got {body:?}")))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}
