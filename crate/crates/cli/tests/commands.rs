use std::path::Path;
use std::process::{Command, Output};

use scmf_core::instances::{load_graph, load_problem};
use scmf_core::Basis;

fn scmf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scmf")).current_dir(dir).args(args).output().unwrap()
}

#[test]
fn gen_sk_is_byte_identical_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a.json", "b.json"] {
        let o = scmf(dir.path(), &["gen", "sk", "--n", "32", "--seed", "7", "--out", out]);
        assert!(o.status.success());
        assert!(String::from_utf8_lossy(&o.stdout).contains("sha256"));
    }
    let a = std::fs::read(dir.path().join("a.json")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.json")).unwrap());
    assert_eq!(load_problem(&dir.path().join("a.json")).unwrap().n(), 32);
}

#[test]
fn gen_sk_rejects_single_spin() {
    let dir = tempfile::tempdir().unwrap();
    let o = scmf(dir.path(), &["gen", "sk", "--n", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--n"));
}

#[test]
fn gen_clique_couples_only_non_edges() {
    let dir = tempfile::tempdir().unwrap();
    assert!(scmf(dir.path(), &["gen", "graph", "--n", "9", "--seed", "5", "--out", "g.json"]).status.success());
    assert!(scmf(dir.path(), &["gen", "clique", "--graph", "g.json", "--lambda", "2", "--out", "c.json"]).status.success());
    let g = load_graph(&dir.path().join("g.json")).unwrap();
    let p = load_problem(&dir.path().join("c.json")).unwrap();
    assert_eq!(p.basis(), Basis::Occupation);
    for (i, &w) in g.weights().iter().enumerate() {
        assert_eq!(p.h()[i], -w);
    }
    for i in 0..9 {
        for j in i + 1..9 {
            let expect = if g.adjacent(i, j) { 0.0 } else { 2.0 };
            assert_eq!(p.w().get(i, j), expect, "pair ({i}, {j})");
        }
    }
}

#[test]
fn corrupted_problem_file_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), "{\"n\": 3, \"h\": [1.0,").unwrap();
    let o = scmf(dir.path(), &["verify", "--problem", "bad.json"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.starts_with("error: bad.json"), "{err}");
    assert!(!err.contains("panicked"));
}

#[test]
fn verify_only_runs_one_criterion() {
    let dir = tempfile::tempdir().unwrap();
    let o = scmf(dir.path(), &["verify", "--only", "analytic"]);
    assert!(o.status.success());
    let out = String::from_utf8_lossy(&o.stdout);
    assert_eq!(out.lines().filter(|l| l.starts_with('[')).count(), 1);
    assert!(out.contains("[PASS]  1 analytic"));
    assert!(!scmf(dir.path(), &["verify", "--only", "nope"]).status.success());
}

#[test]
fn clique_eta_sweep_gives_rows_differing_in_eta() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"kind": "clique", "k": [2], "eta": [0.5, 1.0], "shots": 10, "optimize": false,
        "scmf": {"init_env": "half"}, "random_graph": {"n": 8}, "out": "res"}"#;
    std::fs::write(dir.path().join("c.json"), cfg).unwrap();
    let o = scmf(dir.path(), &["run", "--config", "c.json", "--jobs", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rd = csv::Reader::from_path(dir.path().join("res/clique_summary.csv")).unwrap();
    let header = rd.headers().unwrap().clone();
    let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2);
    let eta = header.iter().position(|h| h == "eta").unwrap();
    assert_eq!((&rows[0][eta], &rows[1][eta]), ("0.5", "1"));
    for c in ["config_hash", "root_seed", "k", "p", "lambda"] {
        let i = header.iter().position(|h| h == c).unwrap();
        assert_eq!(rows[0][i], rows[1][i]);
    }
}

#[test]
fn run_reports_invalid_config() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"kind": "scaling-k", "ensemble": 0}"#).unwrap();
    let o = scmf(dir.path(), &["run", "--config", "c.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ensemble"));
}

#[test]
fn seed_and_out_flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"kind": "baseline", "n": [8], "ensemble": 2, "out": "ignored"}"#;
    std::fs::write(dir.path().join("c.json"), cfg).unwrap();
    for (seed, out) in [("3", "x"), ("3", "y"), ("4", "z")] {
        assert!(scmf(dir.path(), &["run", "--config", "c.json", "--seed", seed, "--out", out, "--jobs", "1"]).status.success());
    }
    let read = |d: &str| std::fs::read(dir.path().join(d).join("baseline_runs.csv")).unwrap();
    assert_eq!(read("x"), read("y"));
    assert_ne!(read("x"), read("z"));
    assert!(!dir.path().join("ignored").exists());
    let text = String::from_utf8(read("x")).unwrap();
    assert!(text.starts_with("config_hash,root_seed,instance_seed,run_seed,"));
}
