use std::process::Command;

fn gate() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_gate"));
    c.env("RUST_LOG", "warn");
    c
}

fn tiny_args() -> Vec<&'static str> {
    vec![
        "--n-points",
        "1200",
        "--n-queries",
        "400",
        "--dim",
        "8",
        "--n-clusters",
        "6",
        "--knn-k",
        "12",
        "--l-build",
        "30",
        "--r-deg",
        "16",
        "--c-pool",
        "100",
        "--n-c",
        "32",
        "--k-branch",
        "4",
        "--h",
        "2",
        "--d-u",
        "16",
        "--d-k",
        "8",
        "--heads",
        "2",
        "--d-f",
        "16",
        "--hub-hidden",
        "32",
        "--query-hidden",
        "32",
        "--latent",
        "16",
        "--lr",
        "1e-3",
        "--epochs",
        "2",
        "--batch-size",
        "16",
        "--s",
        "4",
        "--beam",
        "2",
        "--ls-sweep",
        "10,20",
    ]
}

#[test]
fn config_prints_overrides_and_file_values() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("c.conf");
    std::fs::write(&file, "epochs = 7\nbeam = 5\n").unwrap();
    let out = gate().args(["config", "--config"]).arg(&file).args(["--beam", "3", "--n-points=2000"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines.contains(&"epochs = 7"));
    assert!(lines.contains(&"beam = 3"));
    assert!(lines.contains(&"n_points = 2000"));

    let work = dir.path().join("never-made");
    assert!(gate().arg("config").arg("--dir").arg(&work).status().unwrap().success());
    assert!(!work.exists());
}

#[test]
fn bad_overrides_fail_with_a_message() {
    for args in [vec!["config", "--no-such-key", "1"], vec!["config", "--epochs"], vec!["config", "stray"]] {
        let out = gate().args(&args).output().unwrap();
        assert!(!out.status.success(), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"), "{args:?}");
    }
}

#[test]
fn stage_without_inputs_names_the_producer() {
    let dir = tempfile::tempdir().unwrap();
    let out = gate().args(["build-graph", "--dir"]).arg(dir.path()).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("`gen`"));
}

#[test]
fn grad_check_passes_and_fails_on_tolerance() {
    let out = gate().args(["grad-check", "--seeds", "2"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("gradient check passed"));
    let out = gate().args(["grad-check", "--seeds", "1", "--tol", "1e-15"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn run_then_bench_is_up_to_date() {
    let dir = tempfile::tempdir().unwrap();
    let out = gate().arg("run").arg("--dir").arg(dir.path()).args(tiny_args()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("bench: done"));
    assert!(text.contains("strategy,l_s,k,recall"));
    assert!(dir.path().join("bench.csv").exists());

    let out = gate().arg("bench").arg("--dir").arg(dir.path()).args(tiny_args()).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains("bench: up to date"));
}
