//! Python bindings: datasets, exact search, graph construction and search,
//! the staged pipeline and the assembled index.

use std::collections::BTreeMap;
use std::path::PathBuf;

use gate_core::bench::BenchRow;
use gate_core::graph::{build_knn_graph, build_nsg, greedy_search, NsgParams, ProximityGraph};
use gate_core::knn::{brute_force_knn, recall_ids};
use gate_core::model::gradcheck::{check_gradients, GradProblem};
use gate_core::model::ModelShape;
use gate_core::navigation::GateIndex;
use gate_core::pipeline::{Pipeline, PipelineConfig, Stage, StageStatus};
use gate_core::{GateError, VectorDataset};
use pyo3::exceptions::{PyFileNotFoundError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: GateError) -> PyErr {
    let msg = e.to_string();
    match e {
        GateError::InvalidArgument(_) | GateError::Config(_) | GateError::Format { .. } => PyValueError::new_err(msg),
        GateError::MissingArtifact { .. } => PyFileNotFoundError::new_err(msg),
        GateError::Io { .. } => PyOSError::new_err(msg),
        GateError::Internal(_) => PyRuntimeError::new_err(msg),
    }
}

/// Dense row-major float32 vectors.
#[pyclass(name = "VectorDataset", module = "gate", frozen)]
pub struct PyDataset {
    inner: VectorDataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    fn new(rows: Vec<Vec<f32>>) -> PyResult<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let inner = VectorDataset::from_rows(dim, &rows).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load_fvecs(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: gate_core::io::load_fvecs(path).map_err(to_py)? })
    }

    fn save_fvecs(&self, path: PathBuf) -> PyResult<()> {
        gate_core::io::save_fvecs(&self.inner, path).map_err(to_py)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __getitem__(&self, i: usize) -> PyResult<Vec<f32>> {
        if i >= self.inner.len() {
            return Err(pyo3::exceptions::PyIndexError::new_err(format!("row {i} out of range")));
        }
        Ok(self.inner.get(i).to_vec())
    }

    fn medoid(&self) -> Option<usize> {
        self.inner.medoid()
    }

    /// Exact `k` nearest neighbors as `(ids, squared distances)`.
    fn knn(&self, q: Vec<f32>, k: usize) -> PyResult<(Vec<u32>, Vec<f32>)> {
        let r = brute_force_knn(&self.inner, &q, k).map_err(to_py)?;
        Ok((r.ids, r.dists))
    }

    fn __repr__(&self) -> String {
        format!("VectorDataset(n={}, dim={})", self.inner.len(), self.inner.dim())
    }
}

/// `|returned ∩ truth[:k]| / k`.
#[pyfunction]
fn recall_at_k(returned: Vec<u32>, truth: Vec<u32>, k: usize) -> PyResult<f64> {
    recall_ids(&returned, &truth, k).map_err(to_py)
}

/// Directed proximity graph over a dataset.
#[pyclass(name = "ProximityGraph", module = "gate", frozen)]
pub struct PyGraph {
    inner: ProximityGraph,
    #[pyo3(get)]
    medoid: Option<u32>,
}

#[pymethods]
impl PyGraph {
    /// Builds a kNN graph and refines it into a navigating graph.
    #[staticmethod]
    #[pyo3(signature = (dataset, knn_k=32, l_build=50, r_deg=50, c_pool=512))]
    fn build(dataset: &PyDataset, knn_k: usize, l_build: usize, r_deg: usize, c_pool: usize) -> PyResult<Self> {
        let knn = build_knn_graph(&dataset.inner, knn_k).map_err(to_py)?;
        let b = build_nsg(&dataset.inner, &knn, NsgParams { l_build, r_deg, c_pool }).map_err(to_py)?;
        Ok(Self { inner: b.graph, medoid: Some(b.medoid) })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: ProximityGraph::load(path).map_err(to_py)?, medoid: None })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.node_count()
    }

    fn neighbors(&self, u: usize) -> PyResult<Vec<u32>> {
        if u >= self.inner.node_count() {
            return Err(PyValueError::new_err(format!("node {u} out of range")));
        }
        Ok(self.inner.neighbors(u).to_vec())
    }

    /// Best-first search from `entries`; returns `(ids, hops)`.
    fn search(
        &self,
        dataset: &PyDataset,
        q: Vec<f32>,
        l_s: usize,
        k: usize,
        entries: Vec<u32>,
    ) -> PyResult<(Vec<u32>, usize)> {
        let out = greedy_search(&self.inner, &dataset.inner, &q, l_s, k, &entries).map_err(to_py)?;
        Ok((out.results.ids, out.hops))
    }
}

/// Assembled two-tier index: hub routing followed by base-graph search.
#[pyclass(name = "GateIndex", module = "gate", frozen)]
pub struct PyIndex {
    inner: GateIndex,
}

#[pymethods]
impl PyIndex {
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: GateIndex::load(dir).map_err(to_py)?.0 })
    }

    #[getter]
    fn hub_ids(&self) -> Vec<u32> {
        self.inner.hubs.ids.clone()
    }

    /// Entry hub for `q` as `(dataset id, navigation hops)`.
    #[pyo3(signature = (q, beam=None))]
    fn route(&self, q: Vec<f32>, beam: Option<usize>) -> PyResult<(u32, usize)> {
        let r = self.inner.route_query(&q, beam.unwrap_or(self.inner.beam)).map_err(to_py)?;
        Ok((r.entry, r.hops))
    }

    /// Returns `(ids, total hops, entry id)`.
    fn search(&self, dataset: &PyDataset, q: Vec<f32>, l_s: usize, k: usize) -> PyResult<(Vec<u32>, usize, u32)> {
        let out = self.inner.search(&dataset.inner, &q, l_s, k).map_err(to_py)?;
        Ok((out.search.results.ids, out.search.hops, out.route.entry))
    }

    #[getter]
    fn inference_count(&self) -> usize {
        self.inner.inference_count()
    }
}

fn row_dict(py: Python<'_>, r: &BenchRow) -> PyResult<Py<pyo3::types::PyDict>> {
    let d = pyo3::types::PyDict::new(py);
    d.set_item("strategy", r.strategy.name())?;
    d.set_item("l_s", r.l_s)?;
    d.set_item("k", r.k)?;
    d.set_item("recall", r.recall)?;
    d.set_item("mean_hops", r.mean_hops)?;
    d.set_item("median_hops", r.median_hops)?;
    d.set_item("dist_evals", r.dist_evals)?;
    d.set_item("qps", r.qps)?;
    d.set_item("n_queries", r.n_queries)?;
    Ok(d.unbind())
}

/// Staged, resumable pipeline rooted at a working directory.
#[pyclass(name = "Pipeline", module = "gate", frozen)]
pub struct PyPipeline {
    inner: Pipeline,
}

#[pymethods]
impl PyPipeline {
    /// `config` overrides defaults (or the values read from `config_file`).
    #[new]
    #[pyo3(signature = (dir, config=None, config_file=None))]
    fn new(dir: PathBuf, config: Option<BTreeMap<String, String>>, config_file: Option<PathBuf>) -> PyResult<Self> {
        let mut cfg = match config_file {
            Some(p) => PipelineConfig::load(p).map_err(to_py)?,
            None => PipelineConfig::default(),
        };
        for (k, v) in config.unwrap_or_default() {
            cfg.set(&k, &v).map_err(to_py)?;
        }
        Ok(Self { inner: Pipeline::new(cfg, dir).map_err(to_py)? })
    }

    #[getter]
    fn config(&self) -> BTreeMap<String, String> {
        PipelineConfig::KEYS.iter().map(|k| (k.to_string(), self.inner.config.get(k).unwrap_or_default())).collect()
    }

    #[staticmethod]
    fn stages() -> Vec<&'static str> {
        Stage::ALL.iter().map(|s| s.name()).collect()
    }

    /// Runs one stage; returns True if it ran, False if it was up to date.
    fn run(&self, py: Python<'_>, stage: &str) -> PyResult<bool> {
        let stage: Stage = stage.parse().map_err(to_py)?;
        let status = py.detach(|| self.inner.run(stage)).map_err(to_py)?;
        Ok(status == StageStatus::Ran)
    }

    fn run_all(&self, py: Python<'_>) -> PyResult<Vec<(&'static str, bool)>> {
        let all = py.detach(|| self.inner.run_all()).map_err(to_py)?;
        Ok(all.into_iter().map(|(s, st)| (s.name(), st == StageStatus::Ran)).collect())
    }

    /// Re-runs the benchmark and returns one dict per row.
    fn bench(&self, py: Python<'_>) -> PyResult<Vec<Py<pyo3::types::PyDict>>> {
        let report = py.detach(|| self.inner.bench()).map_err(to_py)?;
        report.rows.iter().map(|r| row_dict(py, r)).collect()
    }

    fn load_index(&self) -> PyResult<PyIndex> {
        Ok(PyIndex { inner: self.inner.load_index().map_err(to_py)? })
    }

    fn medoid(&self) -> PyResult<u32> {
        self.inner.medoid().map_err(to_py)
    }
}

/// Finite-difference gradient check at small model shapes; returns the
/// worst per-tensor relative error.
#[pyfunction]
#[pyo3(signature = (seed=0, tau=0.07, step=1e-3))]
fn grad_check(seed: u64, tau: f64, step: f64) -> PyResult<f64> {
    let shape = ModelShape {
        d_p: 32,
        d_u: 16,
        d_k: 8,
        heads: 2,
        d_f: 32,
        hub_hidden: vec![32],
        query_hidden: vec![32],
        latent: 16,
    };
    let problem = GradProblem::random(shape, tau, 3, 1, 8, seed).map_err(to_py)?;
    Ok(check_gradients(&problem, step, 1e-4).map_err(to_py)?.max_tensor_error())
}

#[pymodule]
pub fn gate(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyGraph>()?;
    m.add_class::<PyIndex>()?;
    m.add_class::<PyPipeline>()?;
    m.add_function(wrap_pyfunction!(recall_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    Ok(())
}
