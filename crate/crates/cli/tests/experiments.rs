use std::collections::HashMap;
use std::path::Path;

use scmf_cli::config::{ExperimentConfig, Kind};
use scmf_cli::experiments::run;
use scmf_core::qaoa::Engine;
use scmf_core::scmf::{FitConfig, ScmfConfig, Selection};
use scmf_core::variational::OptimizerConfig;

fn read(path: &Path) -> Vec<HashMap<String, String>> {
    let mut rd = csv::Reader::from_path(path).unwrap();
    let header = rd.headers().unwrap().clone();
    rd.records().map(|r| header.iter().map(String::from).zip(r.unwrap().iter().map(String::from)).collect()).collect()
}

#[test]
fn partial_failures_keep_successful_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        kind: Kind::Concentration,
        n: vec![9],
        k: vec![1],
        p: vec![1, 2],
        ensemble: 2,
        optimize: false,
        scmf: ScmfConfig { engine: Engine::StateVector { max_qubits: 4 }, ..Default::default() },
        out: dir.path().to_path_buf(),
        ..Default::default()
    };
    let report = run(&cfg, 2).unwrap();
    assert_eq!(report.failures.len(), 2);
    assert!(report.failures.iter().all(|f| f.contains("p=2")));
    let summary = read(&dir.path().join("concentration_summary.csv"));
    assert_eq!(summary.len(), 1);
    assert_eq!(summary[0]["p"], "1");
    assert_eq!(summary[0]["count"], "2");
    assert_eq!(read(&dir.path().join("failures.csv")).len(), 2);
}

#[test]
fn convergence_kind_writes_typ_curve_and_rate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        kind: Kind::Convergence,
        n: vec![14],
        k: vec![3],
        ensemble: 10,
        optimize: false,
        scmf: ScmfConfig { eps_env: f64::MIN_POSITIVE, eps_cost: f64::MIN_POSITIVE, max_iters: Some(45), selection: Selection::RoundRobin, ..Default::default() },
        fit: FitConfig { burn_in: 6, ..Default::default() },
        out: dir.path().to_path_buf(),
        ..Default::default()
    };
    assert!(run(&cfg, 1).unwrap().failures.is_empty());
    let fit = read(&dir.path().join("convergence_fit.csv"));
    assert_eq!(fit.len(), 1);
    let rate: f64 = fit[0]["rate"].parse().unwrap();
    let r2: f64 = fit[0]["r_squared"].parse().unwrap();
    assert!(rate > 0.0 && r2 > 0.8, "rate {rate}, r2 {r2}");
    let typ = read(&dir.path().join("convergence_typ.csv"));
    assert!(typ.len() >= 10);
    let traces = read(&dir.path().join("convergence_traces.csv"));
    let seeds: std::collections::HashSet<&str> = traces.iter().map(|r| r["instance_seed"].as_str()).collect();
    assert_eq!(seeds.len(), 10);
}

#[test]
fn scaling_k_dips_at_two_then_improves() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        kind: Kind::ScalingK,
        n: vec![16],
        k: vec![1, 2, 4],
        ensemble: 6,
        optimizer: OptimizerConfig { max_evals: 80, ..Default::default() },
        out: dir.path().to_path_buf(),
        ..Default::default()
    };
    assert!(run(&cfg, 1).unwrap().failures.is_empty());
    let rows = read(&dir.path().join("scaling_k_summary.csv"));
    let density = |k: &str| -> f64 { rows.iter().find(|r| r["k"] == k).unwrap()["mean_density"].parse().unwrap() };
    let (d1, d2, d4) = (density("1"), density("2"), density("4"));
    assert!(d1 < d2 && d4 < d2, "{d1} {d2} {d4}");
    let intra: f64 = rows.iter().find(|r| r["k"] == "1").unwrap()["mean_intra_fraction"].parse().unwrap();
    assert!((intra - 1.0).abs() < 1e-12);
}

#[test]
fn output_is_independent_of_job_count() {
    let root = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        kind: Kind::Multistart,
        n: vec![8, 10],
        k: vec![2],
        ensemble: 3,
        optimize: false,
        starts: 30,
        ..Default::default()
    };
    let a = ExperimentConfig { out: root.path().join("a"), ..cfg.clone() };
    let b = ExperimentConfig { out: root.path().join("b"), ..cfg };
    run(&a, 1).unwrap();
    run(&b, 4).unwrap();
    for f in ["multistart_solutions.csv", "multistart_summary.csv", "manifest.json", "config.json"] {
        let (x, y) = (std::fs::read(a.out.join(f)).unwrap(), std::fs::read(b.out.join(f)).unwrap());
        if f == "config.json" {
            assert_ne!(x, y);
        } else {
            assert_eq!(x, y, "{f}");
        }
    }
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut kinds = Vec::new();
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ExperimentConfig::load(&path).unwrap();
        cfg.validate().unwrap();
        assert_eq!(path.file_stem().unwrap().to_str().unwrap(), cfg.kind.name());
        kinds.push(cfg.kind);
    }
    assert_eq!(kinds.len(), 8);
}
