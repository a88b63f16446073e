use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};

use scmf_core::instances::{build_clique_problem, generate_sk, load_graph, random_graph, save_graph, save_problem};
use scmf_core::RngSeed;
use scmf_cli::config::ExperimentConfig;
use scmf_cli::{experiments, verify};

#[derive(Parser)]
#[command(name = "scmf", version, about = "Self-consistent mean-field QAOA experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write instance files.
    #[command(subcommand)]
    Gen(Gen),
    /// Run an experiment config.
    Run(RunArgs),
    /// Run the acceptance checks.
    Verify(VerifyArgs),
}

#[derive(Subcommand)]
enum Gen {
    /// Sherrington-Kirkpatrick problem with Gaussian couplings.
    Sk {
        #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
        n: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Max-weight clique problem (occupation basis) from a graph file.
    Clique {
        #[arg(long)]
        graph: PathBuf,
        /// Non-edge penalty; defaults to 2 max(w) + 0.1.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Random vertex-weighted graph.
    Graph {
        #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
        n: u64,
        #[arg(long, default_value_t = 0.7)]
        edge_prob: f64,
        #[arg(long, default_value_t = 0.1)]
        w_min: f64,
        #[arg(long, default_value_t = 1.0)]
        w_max: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the root seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Concurrent ensemble members; defaults to the number of CPUs.
    #[arg(long)]
    jobs: Option<usize>,
    /// Overrides the output directory in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Run a single criterion by name.
    #[arg(long)]
    only: Option<String>,
    /// Check the closed form against the simulator on a problem file instead.
    #[arg(long)]
    problem: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(g) => gen(g).map(|()| true),
        Command::Run(a) => run(a),
        Command::Verify(a) => verify_cmd(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn manifest(command: &str, path: &PathBuf, extra: serde_json::Value) -> Result<()> {
    let bytes = std::fs::read(path)?;
    let mut m = json!({ "command": command, "file": path, "sha256": hex::encode(Sha256::digest(&bytes)) });
    if let (Some(obj), serde_json::Value::Object(more)) = (m.as_object_mut(), extra) {
        obj.extend(more);
    }
    println!("{}", serde_json::to_string_pretty(&m)?);
    Ok(())
}

fn gen(g: Gen) -> Result<()> {
    match g {
        Gen::Sk { n, seed, out } => {
            let path = out.unwrap_or_else(|| PathBuf::from(format!("sk_n{n}_seed{seed}.json")));
            let problem = generate_sk(n as usize, RngSeed(seed))?;
            save_problem(&problem, &path)?;
            manifest("gen sk", &path, json!({ "n": n, "seed": seed }))
        }
        Gen::Clique { graph, lambda, out } => {
            let g = load_graph(&graph)?;
            let lambda = lambda.unwrap_or(2.0 * g.max_weight() + 0.1);
            let path = out.unwrap_or_else(|| graph.with_extension("problem.json"));
            save_problem(&build_clique_problem(&g, lambda)?, &path)?;
            manifest("gen clique", &path, json!({ "graph": graph, "lambda": lambda, "vertices": g.n() }))
        }
        Gen::Graph { n, edge_prob, w_min, w_max, seed, out } => {
            let path = out.unwrap_or_else(|| PathBuf::from(format!("graph_n{n}_seed{seed}.json")));
            save_graph(&random_graph(n as usize, edge_prob, w_min, w_max, RngSeed(seed))?, &path)?;
            manifest("gen graph", &path, json!({ "n": n, "edge_prob": edge_prob, "w_min": w_min, "w_max": w_max, "seed": seed }))
        }
    }
}

fn run(a: RunArgs) -> Result<bool> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(o) = a.out {
        cfg.out = o;
    }
    let jobs = a.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let report = experiments::run(&cfg, jobs).with_context(|| format!("running {}", a.config.display()))?;
    for f in &report.files {
        println!("wrote {}", f.display());
    }
    for failure in &report.failures {
        eprintln!("run failed: {failure}");
    }
    Ok(report.failures.is_empty())
}

fn verify_cmd(a: VerifyArgs) -> Result<bool> {
    if let Some(path) = a.problem {
        let r = verify::check_problem_file(&path)?;
        println!("{r}");
        return Ok(r.passed);
    }
    let reports = verify::run_all(a.only.as_deref(), |r| println!("{r}  ({:.1}s)", r.elapsed.as_secs_f64()))?;
    let failed = reports.iter().filter(|r| !r.passed).count();
    println!("{} passed, {failed} failed", reports.len() - failed);
    Ok(failed == 0)
}
