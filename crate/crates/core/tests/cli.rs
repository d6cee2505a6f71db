use std::path::Path;
use std::process::{Command, Output};

use octawidth::witness::WitnessTrace;
use octawidth::Subspace;

fn octawidth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_octawidth")).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn norm_and_dual() {
    let out = octawidth(&["norm", "--n", "2", "--m", "2", "--norm", "2,1", "--vector", "3,4,0,1"]);
    assert!(out.status.success());
    assert_eq!(stdout(&out).trim(), "6");
    let out = octawidth(&["norm", "--n", "2", "--m", "2", "--norm", "inf,1", "--vector", "-3,1,0,2", "--dual"]);
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "5");
    assert_eq!(lines[2], "-1,0,0,1");
    let out = octawidth(&["norm", "--n", "2", "--m", "2", "--norm", "2,1", "--vector", "1,2,3"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn witness_trace_and_subspace_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.json");
    let sub = dir.path().join("l.csv");
    let out = octawidth(&[
        "witness", "--n", "4", "--m", "12", "--seed", "3", "--output", p(&trace), "--save-subspace", p(&sub),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let header = std::fs::read_to_string(&sub).unwrap();
    assert!(header.starts_with("# N=48 dim=24"));
    let l = Subspace::load_csv(&sub).unwrap();
    assert_eq!((l.ambient_dim(), l.dim()), (48, 24));

    let out = octawidth(&["verify", "--trace", p(&trace), "--subspace", p(&sub)]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["structural_pass"], true);

    let mut t: WitnessTrace = serde_json::from_str(&std::fs::read_to_string(&trace).unwrap()).unwrap();
    assert!(t.certificate.ratio > 0.0);
    let mut coords = t.x.coords().to_vec();
    coords[5] += 1e-3;
    t.x = octawidth::BlockVector::new(t.structure, coords).unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, serde_json::to_string(&t).unwrap()).unwrap();
    let out = octawidth(&["verify", "--trace", p(&bad), "--subspace", p(&sub)]);
    assert_eq!(out.status.code(), Some(1));

    // a subspace file from elsewhere
    let other = dir.path().join("other.csv");
    std::fs::write(&other, "1,0,0,0\n0,1,0,0\n").unwrap();
    let out = octawidth(&["verify", "--trace", p(&trace), "--subspace", p(&other)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn witness_is_seed_deterministic() {
    let a = octawidth(&["witness", "--n", "4", "--m", "8", "--seed", "9"]);
    let b = octawidth(&["witness", "--n", "4", "--m", "8", "--seed", "9", "--threads", "1"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn balance_instance_file() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("inst.json");
    std::fs::write(&inst, r#"{"d": 2, "sets": [[[0.5, 0.5]], [[0.6, -0.8]]]}"#).unwrap();
    let out = octawidth(&["balance", "--instance", p(&inst), "--solver", "exhaustive"]);
    assert!(out.status.success());
    let r: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(r["support"], 1);
    std::fs::write(&inst, r#"{"d": 2, "sets": [[[2.0, 0.0]]]}"#).unwrap();
    let out = octawidth(&["balance", "--instance", p(&inst)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gaussian_and_width_commands() {
    let out = octawidth(&["gaussian", "--check", "psi", "--t", "1"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!((v["psi"].as_f64().unwrap() - 0.682689492137).abs() < 1e-11);
    let out = octawidth(&["gaussian", "--check", "s-inequality", "--d", "3", "--samples", "20000"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_ne!(v["status"], "fail");

    let out = octawidth(&["width", "--set", "b1", "--n", "8", "--m", "1", "--target", "2,2", "--k", "4", "--method", "exact"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!((v["value"].as_f64().unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
    assert_eq!(v["kind"], "exact");
    let out = octawidth(&["width", "--set", "b1inf", "--n", "2", "--m", "3", "--k", "3", "--method", "heuristic", "--restarts", "1"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(v["value"].as_f64().unwrap() <= 3.0 + 1e-9);
}

#[test]
fn experiment_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"experiment": "balance-sweep", "seeds": [1, 1]}"#).unwrap();
    assert_eq!(octawidth(&["experiment", "--config", p(&cfg)]).status.code(), Some(2));
    assert_eq!(octawidth(&["experiment", "--config", p(&dir.path().join("missing.json"))]).status.code(), Some(2));

    std::fs::write(&cfg, r#"{"experiment": "width-compare", "n": [10], "m": [6]}"#).unwrap();
    let out = octawidth(&["experiment", "--config", p(&cfg), "--format", "json"]);
    assert_eq!(out.status.code(), Some(1));
    let rows: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(rows[0]["status"], "error");

    std::fs::write(&cfg, r#"{"experiment": "balance-sweep", "dims": [6], "m": [10], "trials": [100]}"#).unwrap();
    let out = octawidth(&["experiment", "--config", p(&cfg), "--seeds", "4,5"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().next().unwrap().ends_with("wall_time_ms"));
}
