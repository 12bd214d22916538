use pyo3::prelude::*;
use pyo3::types::PyDict;

fn run(code: &str) {
    Python::attach(|py| {
        let module = PyModule::new(py, "gate").unwrap();
        gate::gate(&module).unwrap();
        py.import("sys").unwrap().getattr("modules").unwrap().set_item("gate", module).unwrap();
        let locals = PyDict::new(py);
        let dir = tempfile::tempdir().unwrap();
        locals.set_item("workdir", dir.path()).unwrap();
        locals.set_item("__builtins__", py.import("builtins").unwrap()).unwrap();
        let code = std::ffi::CString::new(code).unwrap();
        if let Err(e) = py.run(&code, None, Some(&locals)) {
            e.print(py);
            panic!("python snippet failed");
        }
    });
}

#[test]
fn python_api_end_to_end() {
    run(r#"
import gate

ds = gate.VectorDataset([[0.0, 0.0], [1.0, 0.0], [5.0, 5.0], [0.0, 1.0]])
assert len(ds) == 4 and ds.dim == 2
ids, dists = ds.knn([0.9, 0.1], 2)
assert ids == [1, 0], ids
assert gate.recall_at_k([3, 9, 1], [1, 2, 3], 3) == 2 / 3

try:
    gate.VectorDataset([[1.0], [1.0, 2.0]])
    raise AssertionError("ragged rows accepted")
except ValueError:
    pass

p = gate.Pipeline(workdir, {
    "n_points": "1200", "n_queries": "400", "dim": "8", "n_clusters": "6", "knn_k": "12",
    "l_build": "30", "r_deg": "16", "c_pool": "100", "n_c": "32", "k_branch": "4", "h": "2",
    "d_u": "16", "d_k": "8", "heads": "2", "d_f": "16", "hub_hidden": "32", "query_hidden": "32",
    "latent": "16", "lr": "1e-3", "epochs": "2", "batch_size": "16", "s": "4", "beam": "2",
    "ls_sweep": "10,20",
})
assert p.config["n_points"] == "1200"
try:
    p.run("build-graph")
    raise AssertionError("ran without inputs")
except FileNotFoundError as e:
    assert "gen" in str(e)

statuses = p.run_all()
assert [s for s, _ in statuses] == gate.Pipeline.stages()
assert all(ran for _, ran in statuses)
assert p.run("bench") is False

rows = p.bench()
assert {r["strategy"] for r in rows} == {"random", "medoid", "gate"}
assert all(0.0 <= r["recall"] <= 1.0 for r in rows)

base = gate.VectorDataset.load_fvecs(workdir / "base.fvecs")
index = p.load_index()
q = base[7]
ids, hops, entry = index.search(base, q, 20, 5)
assert ids[0] == 7 and entry in index.hub_ids and index.inference_count == 1
graph = gate.ProximityGraph.load(workdir / "graph.pgrf")
plain, _ = graph.search(base, q, 20, 5, [p.medoid()])
assert plain[0] == 7

assert gate.grad_check(0) < 1e-4
"#);
}
