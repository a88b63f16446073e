//! Batch experiments: task fan-out, CSV tables, and aggregate summaries.
//!
//! Tasks run on a rayon pool but results are written in task order, so the
//! output does not depend on `--jobs`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use scmf_core::instances::{build_clique_problem, load_graph, random_graph, random_partition, CliqueGraph};
use scmf_core::model::intra_energy_fraction;
use scmf_core::postprocess::{
    brute_force, clique_local_search, concatenate_global, greedy_clique_repair, greedy_descent, max_weight_clique, random_assignment, sample_pool,
    simulated_annealing, AnnealSchedule, BRUTE_FORCE_CAP,
};
use scmf_core::qaoa::DEFAULT_MAX_QUBITS;
use scmf_core::scmf::{fit_convergence_rate, run_self_consistency, scale_environment, solve_fixed_point_multistart, MultistartConfig, ScmfConfig, ScmfTrace};
use scmf_core::variational::{initial_params, optimize, scan_landscape, sk_heuristic_init, Init, OptimizerConfig};
use scmf_core::{IsingProblem, Partition, QaoaParams, RngSeed};

use crate::config::{ExperimentConfig, Kind};
use crate::pipeline::{density, mean_se, resolve_engine, sk_instance, Seeds, SkInstance};

const KEY: [&str; 4] = ["config_hash", "root_seed", "instance_seed", "run_seed"];

struct Table {
    file: String,
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(file: impl Into<String>, keyed: bool, columns: &[&'static str]) -> Self {
        let mut header = if keyed { KEY.to_vec() } else { vec!["config_hash", "root_seed"] };
        header.extend_from_slice(columns);
        Self { file: file.into(), header, rows: Vec::new() }
    }

    fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(&self.file);
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(path)
    }
}

fn f(x: f64) -> String {
    format!("{x}")
}

fn joined(xs: &[f64]) -> String {
    xs.iter().map(|x| f(*x)).collect::<Vec<_>>().join(";")
}

struct Ctx {
    cfg: ExperimentConfig,
    hash: String,
    seeds: Seeds,
}

impl Ctx {
    fn key(&self, instance: RngSeed, run: RngSeed) -> Vec<String> {
        vec![self.hash.clone(), self.cfg.seed.to_string(), instance.0.to_string(), run.0.to_string()]
    }

    fn summary_key(&self) -> Vec<String> {
        vec![self.hash.clone(), self.cfg.seed.to_string()]
    }

    fn scmf(&self, eta: f64, run: RngSeed, partition: &Partition, p: usize) -> ScmfConfig {
        ScmfConfig { eta, seed: run, engine: resolve_engine(self.cfg.scmf.engine, partition, p), ..self.cfg.scmf.clone() }
    }

    fn angles(&self, inst: &SkInstance, p: usize, scmf: &ScmfConfig) -> Result<(QaoaParams, f64, usize)> {
        if self.cfg.optimize {
            let r = optimize(&inst.reduced.problem, &inst.partition, p, &self.cfg.optimizer, scmf)?;
            Ok((r.params, r.energy, r.evals.len()))
        } else {
            let params = sk_heuristic_init(inst.n, inst.partition.k(), p)?;
            let out = run_self_consistency(&inst.reduced.problem, &inst.partition, &params, scmf)?;
            Ok((params, out.energy, 0))
        }
    }

    fn with_key(&self, inst_seed: RngSeed, run: RngSeed, cols: Vec<String>) -> Vec<String> {
        let mut row = self.key(inst_seed, run);
        row.extend(cols);
        row
    }

    fn with_summary_key(&self, cols: Vec<String>) -> Vec<String> {
        let mut row = self.summary_key();
        row.extend(cols);
        row
    }
}

/// Groups values by key, keeping first-seen key order.
struct Groups<K, V>(Vec<(K, Vec<V>)>);

impl<K: PartialEq, V> Groups<K, V> {
    fn new() -> Self {
        Self(Vec::new())
    }

    fn push(&mut self, key: K, v: V) {
        match self.0.iter_mut().find(|(k, _)| *k == key) {
            Some((_, vs)) => vs.push(v),
            None => self.0.push((key, vec![v])),
        }
    }
}

#[derive(Debug)]
pub struct RunReport {
    pub out: PathBuf,
    pub files: Vec<PathBuf>,
    pub failures: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    config_hash: &'a str,
    kind: &'static str,
    root_seed: u64,
    files: Vec<String>,
    failures: usize,
}

/// Runs an experiment and writes its tables, `config.json`, and `manifest.json` under `cfg.out`.
pub fn run(cfg: &ExperimentConfig, jobs: usize) -> Result<RunReport> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let ctx = Ctx { cfg: cfg.clone(), hash: cfg.hash(), seeds: Seeds::new(cfg.seed) };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
    let (tables, failures) = pool.install(|| match cfg.kind {
        Kind::Landscape => landscape(&ctx),
        Kind::Concentration => concentration(&ctx),
        Kind::Convergence => convergence(&ctx),
        Kind::Multistart => multistart(&ctx),
        Kind::ScalingK | Kind::ScalingP => scaling(&ctx),
        Kind::Clique => clique(&ctx),
        Kind::Baseline => baseline(&ctx),
    })?;
    let mut failure_table = Table::new("failures.csv", false, &["task", "error"]);
    for (task, err) in &failures {
        failure_table.rows.push(ctx.with_summary_key(vec![task.clone(), err.clone()]));
    }
    let mut files = Vec::new();
    for t in tables.iter().chain(std::iter::once(&failure_table)) {
        files.push(t.write(&cfg.out)?);
    }
    let config_path = cfg.out.join("config.json");
    fs::write(&config_path, serde_json::to_string_pretty(cfg)? + "\n")?;
    let manifest = Manifest {
        config_hash: &ctx.hash,
        kind: cfg.kind.name(),
        root_seed: cfg.seed,
        files: files.iter().map(|p| p.file_name().expect("file path").to_string_lossy().into_owned()).collect(),
        failures: failures.len(),
    };
    fs::write(cfg.out.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    files.push(config_path);
    Ok(RunReport { out: cfg.out.clone(), files, failures: failures.into_iter().map(|(t, e)| format!("{t}: {e}")).collect() })
}

type Failures = Vec<(String, String)>;

/// Runs `tasks` in parallel and splits results into successes and labelled failures.
fn execute<T, R, F>(tasks: &[T], label: impl Fn(&T) -> String, f: F) -> (Vec<(usize, R)>, Failures)
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync,
{
    let results: Vec<Result<R>> = tasks.par_iter().map(&f).collect();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => ok.push((i, v)),
            Err(e) => failed.push((label(&tasks[i]), format!("{e:#}"))),
        }
    }
    (ok, failed)
}

#[derive(Debug, Clone, Copy)]
struct SkTask {
    n: usize,
    k: usize,
    i: usize,
    eta: f64,
}

fn sk_tasks(cfg: &ExperimentConfig) -> Vec<SkTask> {
    let mut tasks = Vec::new();
    for &n in &cfg.n {
        for &k in &cfg.k {
            for &eta in &cfg.eta {
                for i in 0..cfg.ensemble {
                    tasks.push(SkTask { n, k, i, eta });
                }
            }
        }
    }
    tasks
}

fn sk_label(t: &SkTask) -> String {
    format!("n={} k={} eta={} instance={}", t.n, t.k, t.eta, t.i)
}

fn landscape(ctx: &Ctx) -> Result<(Vec<Table>, Failures)> {
    let tasks = sk_tasks(&ctx.cfg);
    let (ok, failures) = execute(&tasks, sk_label, |t| {
        let inst = sk_instance(&ctx.seeds, t.n, t.k, t.i)?;
        let run = ctx.seeds.run(t.n, t.k, t.i, 0);
        let scmf = ctx.scmf(t.eta, run, &inst.partition, 1);
        Ok(scan_landscape(&inst.reduced.problem, &inst.partition, &ctx.cfg.grid, &scmf)?)
    });
    let mut runs = Table::new("landscape_runs.csv", true, &["n", "k", "eta", "instance", "gamma", "beta", "energy", "density", "converged"]);
    let mut groups = Groups::new();
    for (idx, grid) in &ok {
        let t = tasks[*idx];
        let (s_inst, s_run) = (ctx.seeds.instance(t.n, t.i), ctx.seeds.run(t.n, t.k, t.i, 0));
        for (a, &g) in grid.gammas.iter().enumerate() {
            for (b, &be) in grid.betas.iter().enumerate() {
                let e = grid.energies[a][b];
                let conv = grid.converged[a][b];
                runs.rows.push(ctx.with_key(
                    s_inst,
                    s_run,
                    vec![t.n.to_string(), t.k.to_string(), f(t.eta), t.i.to_string(), f(g), f(be), f(e), f(density(e, t.n)), conv.to_string()],
                ));
                groups.push((t.n, t.k, t.eta.to_bits(), a, b), (density(e, t.n), conv, g, be));
            }
        }
    }
    let mut summary = Table::new("landscape_summary.csv", false, &["n", "k", "eta", "gamma", "beta", "mean_density", "se_density", "converged_fraction", "count"]);
    for ((n, k, eta, _, _), vals) in groups.0 {
        let d: Vec<f64> = vals.iter().map(|v| v.0).collect();
        let (m, se) = mean_se(&d);
        let conv = vals.iter().filter(|v| v.1).count() as f64 / vals.len() as f64;
        summary.rows.push(ctx.with_summary_key(vec![
            n.to_string(),
            k.to_string(),
            f(f64::from_bits(eta)),
            f(vals[0].2),
            f(vals[0].3),
            f(m),
            f(se),
            f(conv),
            vals.len().to_string(),
        ]));
    }
    Ok((vec![runs, summary], failures))
}

#[derive(Debug, Clone, Copy)]
struct DepthTask {
    sk: SkTask,
    p: usize,
}

fn concentration(ctx: &Ctx) -> Result<(Vec<Table>, Failures)> {
    let tasks: Vec<DepthTask> = sk_tasks(&ctx.cfg).into_iter().flat_map(|sk| ctx.cfg.p.iter().map(move |&p| DepthTask { sk, p })).collect();
    let (ok, failures) = execute(
        &tasks,
        |t| format!("{} p={}", sk_label(&t.sk), t.p),
        |t| {
            let s = t.sk;
            let inst = sk_instance(&ctx.seeds, s.n, s.k, s.i)?;
            let scmf = ctx.scmf(s.eta, ctx.seeds.run(s.n, s.k, s.i, t.p), &inst.partition, t.p);
            ctx.angles(&inst, t.p, &scmf)
        },
    );
    let mut runs = Table::new(
        "concentration_runs.csv",
        true,
        &["n", "k", "p", "eta", "instance", "layer", "gamma", "beta", "gamma_sqrt_n", "energy", "density", "evals"],
    );
    let mut groups = Groups::new();
    for (idx, (params, energy, evals)) in &ok {
        let t = tasks[*idx];
        let s = t.sk;
        let sqrt_n = (s.n as f64).sqrt();
        for l in 0..t.p {
            let (g, b) = (params.gammas()[l], params.betas()[l]);
            runs.rows.push(ctx.with_key(
                ctx.seeds.instance(s.n, s.i),
                ctx.seeds.run(s.n, s.k, s.i, t.p),
                vec![
                    s.n.to_string(),
                    s.k.to_string(),
                    t.p.to_string(),
                    f(s.eta),
                    s.i.to_string(),
                    l.to_string(),
                    f(g),
                    f(b),
                    f(g * sqrt_n),
                    f(*energy),
                    f(density(*energy, s.n)),
                    evals.to_string(),
                ],
            ));
            groups.push((s.n, s.k, t.p, s.eta.to_bits(), l), (g * sqrt_n, b));
        }
    }
    let mut summary = Table::new(
        "concentration_summary.csv",
        false,
        &["n", "k", "p", "eta", "layer", "mean_gamma_sqrt_n", "se_gamma_sqrt_n", "mean_beta", "se_beta", "count"],
    );
    for ((n, k, p, eta, l), vals) in groups.0 {
        let (mg, sg) = mean_se(&vals.iter().map(|v| v.0).collect::<Vec<_>>());
        let (mb, sb) = mean_se(&vals.iter().map(|v| v.1).collect::<Vec<_>>());
        summary.rows.push(ctx.with_summary_key(vec![
            n.to_string(),
            k.to_string(),
            p.to_string(),
            f(f64::from_bits(eta)),
            l.to_string(),
            f(mg),
            f(sg),
            f(mb),
            f(sb),
            vals.len().to_string(),
        ]));
    }
    Ok((vec![runs, summary], failures))
}

fn convergence(ctx: &Ctx) -> Result<(Vec<Table>, Failures)> {
    let tasks = sk_tasks(&ctx.cfg);
    let p = ctx.cfg.p[0];
    let (ok, failures) = execute(&tasks, sk_label, |t| {
        let inst = sk_instance(&ctx.seeds, t.n, t.k, t.i)?;
        let run = ctx.seeds.run(t.n, t.k, t.i, 0);
        let scmf = ctx.scmf(t.eta, run, &inst.partition, p);
        let (params, _, _) = ctx.angles(&inst, p, &scmf)?;
        Ok(run_self_consistency(&inst.reduced.problem, &inst.partition, &params, &scmf)?.trace)
    });
    let mut traces = Table::new("convergence_traces.csv", true, &["n", "k", "eta", "instance", "iteration", "subproblem", "env_metric", "cost_metric", "energy"]);
    let mut groups: Groups<(usize, usize, u64), ScmfTrace> = Groups::new();
    for (idx, trace) in &ok {
        let t = tasks[*idx];
        for r in &trace.records {
            traces.rows.push(ctx.with_key(
                ctx.seeds.instance(t.n, t.i),
                ctx.seeds.run(t.n, t.k, t.i, 0),
                vec![
                    t.n.to_string(),
                    t.k.to_string(),
                    f(t.eta),
                    t.i.to_string(),
                    r.iteration.to_string(),
                    r.subproblem.to_string(),
                    f(r.env_metric),
                    f(r.cost_metric),
                    f(r.energy),
                ],
            ));
        }
        groups.push((t.n, t.k, t.eta.to_bits()), trace.clone());
    }
    let mut typ = Table::new("convergence_typ.csv", false, &["n", "k", "eta", "iteration", "mean_log_env_metric"]);
    let mut fits = Table::new(
        "convergence_fit.csv",
        false,
        &["n", "k", "eta", "rate", "intercept", "r_squared", "points", "floored", "converged_fraction", "mean_iterations", "note"],
    );
    for ((n, k, eta), ts) in groups.0 {
        let conv = ts.iter().filter(|t| t.converged).count() as f64 / ts.len() as f64;
        let (mean_iters, _) = mean_se(&ts.iter().map(|t| t.iterations as f64).collect::<Vec<_>>());
        let base = vec![n.to_string(), k.to_string(), f(f64::from_bits(eta))];
        match fit_convergence_rate(&ts, &ctx.cfg.fit) {
            Ok(fit) => {
                for &(l, y) in &fit.points {
                    typ.rows.push(ctx.with_summary_key([base.clone(), vec![l.to_string(), f(y)]].concat()));
                }
                fits.rows.push(ctx.with_summary_key(
                    [
                        base,
                        vec![
                            f(fit.rate),
                            f(fit.intercept),
                            f(fit.r_squared),
                            fit.points.len().to_string(),
                            fit.floored.to_string(),
                            f(conv),
                            f(mean_iters),
                            String::new(),
                        ],
                    ]
                    .concat(),
                ));
            }
            Err(e) => {
                let nan = f(f64::NAN);
                fits.rows.push(ctx.with_summary_key(
                    [base, vec![nan.clone(), nan.clone(), nan, "0".into(), "0".into(), f(conv), f(mean_iters), e.to_string()]].concat(),
                ));
            }
        }
    }
    Ok((vec![traces, typ, fits], failures))
}

fn multistart(ctx: &Ctx) -> Result<(Vec<Table>, Failures)> {
    let tasks = sk_tasks(&ctx.cfg);
    let ms = MultistartConfig { starts: ctx.cfg.starts, ..Default::default() };
    let (ok, failures) = execute(&tasks, sk_label, |t| {
        let inst = sk_instance(&ctx.seeds, t.n, t.k, t.i)?;
        let run = ctx.seeds.run(t.n, t.k, t.i, 0);
        let scmf = ctx.scmf(t.eta, run, &inst.partition, 1);
        let (params, _, _) = ctx.angles(&inst, 1, &scmf)?;
        let out = run_self_consistency(&inst.reduced.problem, &inst.partition, &params, &scmf)?;
        let rep = solve_fixed_point_multistart(&inst.reduced.problem, &inst.partition, params.gammas()[0], params.betas()[0], &ms, run.fork(1))?;
        Ok((params, out.energy, rep))
    });
    let mut runs = Table::new(
        "multistart_solutions.csv",
        true,
        &["n", "k", "eta", "instance", "gamma", "beta", "rank", "energy", "hits", "residual", "iterative_energy", "dropped_starts"],
    );
    let mut groups = Groups::new();
    for (idx, (params, iterative, rep)) in &ok {
        let t = tasks[*idx];
        for (rank, s) in rep.solutions.iter().enumerate() {
            runs.rows.push(ctx.with_key(
                ctx.seeds.instance(t.n, t.i),
                ctx.seeds.run(t.n, t.k, t.i, 0),
                vec![
                    t.n.to_string(),
                    t.k.to_string(),
                    f(t.eta),
                    t.i.to_string(),
                    f(params.gammas()[0]),
                    f(params.betas()[0]),
                    rank.to_string(),
                    f(s.energy),
                    s.hits.to_string(),
                    f(s.residual),
                    f(*iterative),
                    rep.dropped.to_string(),
                ],
            ));
        }
        let hit = rep.min_energy().is_some_and(|m| *iterative <= m + 0.1);
        groups.push((t.n, t.k, t.eta.to_bits()), (hit, rep.solutions.len() as f64));
    }
    let mut summary = Table::new("multistart_summary.csv", false, &["n", "k", "eta", "hit_fraction", "mean_distinct_solutions", "count"]);
    for ((n, k, eta), vals) in groups.0 {
        let hits = vals.iter().filter(|v| v.0).count() as f64 / vals.len() as f64;
        let (d, _) = mean_se(&vals.iter().map(|v| v.1).collect::<Vec<_>>());
        summary.rows.push(ctx.with_summary_key(vec![n.to_string(), k.to_string(), f(f64::from_bits(eta)), f(hits), f(d), vals.len().to_string()]));
    }
    Ok((vec![runs, summary], failures))
}

struct DepthResult {
    p: usize,
    params: QaoaParams,
    energy: f64,
    intra: f64,
    converged: bool,
}

/// Every requested depth for one instance, warm-starting each from the previous.
fn depth_chain(ctx: &Ctx, t: &SkTask) -> Result<Vec<DepthResult>> {
    let inst = sk_instance(&ctx.seeds, t.n, t.k, t.i)?;
    let (problem, partition) = (&inst.reduced.problem, &inst.partition);
    let mut depths = ctx.cfg.p.clone();
    depths.sort_unstable();
    depths.dedup();
    let mut out: Vec<DepthResult> = Vec::new();
    for p in depths {
        let scmf = ctx.scmf(t.eta, ctx.seeds.run(t.n, t.k, t.i, 0), partition, p);
        let (params, energy) = if ctx.cfg.optimize {
            let mut best = optimize(problem, partition, p, &ctx.cfg.optimizer, &scmf)?;
            if let Some(prev) = out.last() {
                let mut warm_params = prev.params.clone();
                while warm_params.p() < p {
                    warm_params = warm_params.with_identity_layer();
                }
                let warm = OptimizerConfig { init: Init::Custom(warm_params), ..ctx.cfg.optimizer.clone() };
                let w = optimize(problem, partition, p, &warm, &scmf)?;
                if w.energy < best.energy {
                    best = w;
                }
            }
            (best.params, best.energy)
        } else {
            let params = sk_heuristic_init(t.n, t.k, p)?;
            let e = run_self_consistency(problem, partition, &params, &scmf)?.energy;
            (params, e)
        };
        let run = run_self_consistency(problem, partition, &params, &scmf)?;
        let intra = intra_energy_fraction(problem, partition, &run.expectations).unwrap_or(f64::NAN);
        out.push(DepthResult { p, params, energy, intra, converged: run.trace.converged });
    }
    Ok(out)
}

fn scaling(ctx: &Ctx) -> Result<(Vec<Table>, Failures)> {
    let tasks = sk_tasks(&ctx.cfg);
    let (ok, failures) = execute(&tasks, sk_label, |t| depth_chain(ctx, t));
    let prefix = ctx.cfg.kind.name().replace('-', "_");
    let mut runs = Table::new(
        format!("{prefix}_runs.csv"),
        true,
        &["n", "k", "p", "eta", "instance", "energy", "density", "intra_fraction", "converged", "gammas", "betas"],
    );
    let mut groups = Groups::new();
    for (idx, chain) in &ok {
        let t = tasks[*idx];
        for d in chain {
            runs.rows.push(ctx.with_key(
                ctx.seeds.instance(t.n, t.i),
                ctx.seeds.run(t.n, t.k, t.i, 0),
                vec![
                    t.n.to_string(),
                    t.k.to_string(),
                    d.p.to_string(),
                    f(t.eta),
                    t.i.to_string(),
                    f(d.energy),
                    f(density(d.energy, t.n)),
                    f(d.intra),
                    d.converged.to_string(),
                    joined(d.params.gammas()),
                    joined(d.params.betas()),
                ],
            ));
            groups.push((t.n, t.k, d.p, t.eta.to_bits()), (density(d.energy, t.n), d.intra, d.converged));
        }
    }
    let mut summary = Table::new(
        format!("{prefix}_summary.csv"),
        false,
        &["n", "k", "p", "eta", "mean_density", "se_density", "mean_intra_fraction", "converged_fraction", "count"],
    );
    for ((n, k, p, eta), vals) in groups.0 {
        let (m, se) = mean_se(&vals.iter().map(|v| v.0).collect::<Vec<_>>());
        let (intra, _) = mean_se(&vals.iter().map(|v| v.1).collect::<Vec<_>>());
        let conv = vals.iter().filter(|v| v.2).count() as f64 / vals.len() as f64;
        summary.rows.push(ctx.with_summary_key(vec![
            n.to_string(),
            k.to_string(),
            p.to_string(),
            f(f64::from_bits(eta)),
            f(m),
            f(se),
            f(intra),
            f(conv),
            vals.len().to_string(),
        ]));
    }
    Ok((vec![runs, summary], failures))
}

#[derive(Debug, Clone, Copy)]
struct CliqueTask {
    i: usize,
    k: usize,
    p: usize,
    lambda: Option<f64>,
    eta: f64,
}

struct SampleOut {
    raw: f64,
    repaired: f64,
    size: usize,
    weight: f64,
    valid: bool,
}

struct CliqueOut {
    lambda: f64,
    optimum: Option<f64>,
    samples: Vec<SampleOut>,
}

fn clique_graph(ctx: &Ctx, i: usize) -> Result<(CliqueGraph, RngSeed)> {
    match &ctx.cfg.graph {
        Some(path) => Ok((load_graph(path)?, ctx.seeds.graph(0, 0))),
        None => {
            let g = &ctx.cfg.random_graph;
            let seed = ctx.seeds.graph(g.n, i);
            Ok((random_graph(g.n, g.edge_prob, g.w_min, g.w_max, seed)?, seed))
        }
    }
}

fn clique_task(ctx: &Ctx, t: &CliqueTask) -> Result<CliqueOut> {
    let (graph, _) = clique_graph(ctx, t.i)?;
    let nv = graph.n();
    let lambda = t.lambda.unwrap_or(2.0 * graph.max_weight() + 0.1);
    let problem: IsingProblem = build_clique_problem(&graph, lambda)?;
    let partition = random_partition(nv, t.k, ctx.seeds.partition(nv, t.k, t.i))?;
    let run = ctx.seeds.run(nv, t.k, t.i, t.p);
    let scmf = ctx.scmf(t.eta, run, &partition, t.p);
    let params = if ctx.cfg.optimize {
        optimize(&problem, &partition, t.p, &ctx.cfg.optimizer, &scmf)?.params
    } else {
        initial_params(&problem, &partition, t.p, &ctx.cfg.optimizer, &scmf, &mut Vec::new())?
    };
    let out = run_self_consistency(&problem, &partition, &params, &scmf)?;
    let dressed = scale_environment(&out.environment, t.eta);
    let pool = sample_pool(&problem, &partition, &dressed, &params, ctx.cfg.shots, run.fork(1), DEFAULT_MAX_QUBITS)?;
    let globals = concatenate_global(&pool, ctx.cfg.shots, run.fork(2))?;
    let mut samples = Vec::with_capacity(globals.len());
    for (s, bits) in globals.iter().enumerate() {
        let raw = problem.classical_energy(bits)?;
        let repaired = greedy_clique_repair(&graph, bits, run.fork_path(&[3, s as u64]))?;
        let ls = clique_local_search(&graph, &repaired, ctx.cfg.local_search_iters, run.fork_path(&[4, s as u64]))?;
        samples.push(SampleOut {
            raw,
            repaired: problem.classical_energy(&ls.best)?,
            size: ls.best.iter().filter(|&&b| b).count(),
            weight: ls.best_weight,
            valid: graph.is_clique(&repaired) && graph.is_clique(&ls.best),
        });
    }
    let optimum = if nv <= BRUTE_FORCE_CAP { Some(max_weight_clique(&graph)?.1) } else { None };
    Ok(CliqueOut { lambda, optimum, samples })
}

fn clique(ctx: &Ctx) -> Result<(Vec<Table>, Failures)> {
    let cfg = &ctx.cfg;
    let lambdas: Vec<Option<f64>> = if cfg.lambda.is_empty() { vec![None] } else { cfg.lambda.iter().map(|&l| Some(l)).collect() };
    let mut tasks = Vec::new();
    for i in 0..cfg.ensemble {
        for &k in &cfg.k {
            for &p in &cfg.p {
                for &lambda in &lambdas {
                    for &eta in &cfg.eta {
                        tasks.push(CliqueTask { i, k, p, lambda, eta });
                    }
                }
            }
        }
    }
    let (ok, failures) = execute(
        &tasks,
        |t| format!("graph={} k={} p={} lambda={:?} eta={}", t.i, t.k, t.p, t.lambda, t.eta),
        |t| clique_task(ctx, t),
    );
    let mut runs = Table::new(
        "clique_samples.csv",
        true,
        &["graph", "k", "p", "lambda", "eta", "sample_id", "raw_energy", "repaired_energy", "clique_size", "clique_weight"],
    );
    let mut groups = Groups::new();
    for (idx, out) in &ok {
        let t = tasks[*idx];
        let (_, graph_seed) = clique_graph(ctx, t.i)?;
        let run = ctx.seeds.run(cfg.graph.as_ref().map_or(cfg.random_graph.n, |_| 0), t.k, t.i, t.p);
        for (s, x) in out.samples.iter().enumerate() {
            runs.rows.push(ctx.with_key(
                graph_seed,
                run,
                vec![
                    t.i.to_string(),
                    t.k.to_string(),
                    t.p.to_string(),
                    f(out.lambda),
                    f(t.eta),
                    s.to_string(),
                    f(x.raw),
                    f(x.repaired),
                    x.size.to_string(),
                    f(x.weight),
                ],
            ));
        }
        let raw: Vec<f64> = out.samples.iter().map(|x| x.raw).collect();
        let rep: Vec<f64> = out.samples.iter().map(|x| x.repaired).collect();
        let best = out.samples.iter().map(|x| x.weight).fold(0.0, f64::max);
        let valid = out.samples.iter().filter(|x| x.valid).count() as f64 / out.samples.len() as f64;
        let lambda_label = t.lambda.map_or("auto".to_string(), f);
        groups.push((t.k, t.p, lambda_label, t.eta.to_bits()), (mean_se(&raw).0, mean_se(&rep).0, out.optimum.map_or(f64::NAN, |o| best / o), valid));
    }
    let mut summary = Table::new(
        "clique_summary.csv",
        false,
        &["k", "p", "lambda", "eta", "mean_raw_energy", "se_raw_energy", "mean_repaired_energy", "mean_best_to_optimum", "valid_fraction", "count"],
    );
    for ((k, p, lambda, eta), vals) in groups.0 {
        let (raw, raw_se) = mean_se(&vals.iter().map(|v| v.0).collect::<Vec<_>>());
        let (rep, _) = mean_se(&vals.iter().map(|v| v.1).collect::<Vec<_>>());
        let (ratio, _) = mean_se(&vals.iter().map(|v| v.2).collect::<Vec<_>>());
        let (valid, _) = mean_se(&vals.iter().map(|v| v.3).collect::<Vec<_>>());
        summary.rows.push(ctx.with_summary_key(vec![
            k.to_string(),
            p.to_string(),
            lambda,
            f(f64::from_bits(eta)),
            f(raw),
            f(raw_se),
            f(rep),
            f(ratio),
            f(valid),
            vals.len().to_string(),
        ]));
    }
    Ok((vec![runs, summary], failures))
}

fn baseline(ctx: &Ctx) -> Result<(Vec<Table>, Failures)> {
    let mut tasks = Vec::new();
    for &n in &ctx.cfg.n {
        for i in 0..ctx.cfg.ensemble {
            tasks.push(SkTask { n, k: 1, i, eta: 0.0 });
        }
    }
    let (ok, failures) = execute(
        &tasks,
        |t| format!("n={} instance={}", t.n, t.i),
        |t| {
            let inst = sk_instance(&ctx.seeds, t.n, 1, t.i)?;
            let problem = &inst.reduced.problem;
            let run = ctx.seeds.run(t.n, 0, t.i, 0);
            let mut rows: Vec<(&'static str, f64)> = Vec::new();
            if problem.n() <= BRUTE_FORCE_CAP {
                rows.push(("brute-force", brute_force(problem, BRUTE_FORCE_CAP)?.1));
            }
            rows.push(("annealing", simulated_annealing(problem, &AnnealSchedule::auto(problem, run.fork(0)))?.1));
            rows.push(("greedy", greedy_descent(problem, run.fork(1)).1));
            let mut rng = run.fork(2).rng();
            let random: f64 = (0..100).map(|_| problem.classical_energy(&random_assignment(problem.n(), &mut rng)).expect("length matches")).sum::<f64>() / 100.0;
            rows.push(("random", random));
            Ok(rows)
        },
    );
    let mut runs = Table::new("baseline_runs.csv", true, &["n", "instance", "method", "energy", "density"]);
    let mut groups = Groups::new();
    for (idx, rows) in &ok {
        let t = tasks[*idx];
        for &(method, e) in rows {
            runs.rows.push(ctx.with_key(
                ctx.seeds.instance(t.n, t.i),
                ctx.seeds.run(t.n, 0, t.i, 0),
                vec![t.n.to_string(), t.i.to_string(), method.to_string(), f(e), f(density(e, t.n))],
            ));
            groups.push((t.n, method), density(e, t.n));
        }
    }
    let mut summary = Table::new("baseline_summary.csv", false, &["n", "method", "mean_density", "se_density", "count"]);
    for ((n, method), d) in groups.0 {
        let (m, se) = mean_se(&d);
        summary.rows.push(ctx.with_summary_key(vec![n.to_string(), method.to_string(), f(m), f(se), d.len().to_string()]));
    }
    Ok((vec![runs, summary], failures))
}

/// SHA-256 of every CSV under `dir`, sorted by file name.
pub fn csv_digests(dir: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "csv") {
            let bytes = fs::read(&path)?;
            out.push((path.file_name().expect("file").to_string_lossy().into_owned(), hex::encode(Sha256::digest(&bytes))));
        }
    }
    out.sort();
    Ok(out)
}

/// Small configs covering every experiment kind.
pub fn smoke_configs() -> Vec<ExperimentConfig> {
    let quick = OptimizerConfig { max_evals: 20, ..Default::default() };
    let base = ExperimentConfig { n: vec![8], k: vec![2], ensemble: 2, seed: 42, optimizer: quick, ..Default::default() };
    let mut grid = base.grid.clone();
    grid.gamma_steps = 3;
    grid.beta_steps = 3;
    vec![
        ExperimentConfig { kind: Kind::Landscape, grid, ..base.clone() },
        ExperimentConfig { kind: Kind::Concentration, p: vec![1, 2], ..base.clone() },
        ExperimentConfig { kind: Kind::Convergence, optimize: false, ..base.clone() },
        ExperimentConfig { kind: Kind::Multistart, optimize: false, starts: 20, ..base.clone() },
        ExperimentConfig { kind: Kind::ScalingK, k: vec![1, 2], ..base.clone() },
        ExperimentConfig { kind: Kind::ScalingP, p: vec![1, 2], ..base.clone() },
        ExperimentConfig {
            kind: Kind::Clique,
            eta: vec![0.5, 1.0],
            shots: 20,
            random_graph: crate::config::RandomGraphSpec { n: 8, ..Default::default() },
            scmf: ScmfConfig { init_env: scmf_core::scmf::InitEnv::Half, ..Default::default() },
            ..base.clone()
        },
        ExperimentConfig { kind: Kind::Baseline, n: vec![8, 10], ..base },
    ]
}

/// Runs every smoke config twice, with different job counts, and compares CSV digests.
pub fn determinism_check() -> Result<(bool, String)> {
    let root = tempfile::tempdir()?;
    let mut mismatched = Vec::new();
    let mut compared = 0;
    for (idx, cfg) in smoke_configs().into_iter().enumerate() {
        let mut digests = Vec::new();
        for (rep, jobs) in [(0, 1), (1, 3)] {
            let cfg = ExperimentConfig { out: root.path().join(format!("{idx}-{rep}")), ..cfg.clone() };
            let report = run(&cfg, jobs)?;
            anyhow::ensure!(report.failures.is_empty(), "{} run failed: {:?}", cfg.kind.name(), report.failures);
            digests.push(csv_digests(&cfg.out)?);
        }
        compared += digests[0].len();
        if digests[0] != digests[1] {
            mismatched.push(cfg.kind.name());
        }
    }
    let ok = mismatched.is_empty();
    let detail = if ok { String::new() } else { format!("; differing: {}", mismatched.join(", ")) };
    Ok((ok, format!("{compared} CSV files identical across repeated runs of 8 experiment kinds{detail}")))
}
