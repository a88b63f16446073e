//! The self-consistent mean-field loop.
//!
//! Starting from an initial environment, a subproblem is picked, its fields are
//! dressed by the (optionally rescaled) environment of every other group, the
//! QAOA state is evaluated, and the group's environment entries are replaced by
//! the new one-body expectations. The loop stops once a full window of updates,
//! reaching back to the oldest most-recent update of any group, has relative
//! environment and energy changes below their thresholds.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{factorized_energy, Basis, Environment, ExpectationSet, IsingProblem, Partition, QaoaParams};
use crate::qaoa::{analytic_expectations_p1, Engine, SubproblemSpec};
use crate::seed::RngSeed;

/// Upper bound accepted for the environment rescaling factor.
pub const MAX_ETA: f64 = 4.0;

/// Below this magnitude a relative change falls back to an absolute one.
const ZERO_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitEnv {
    Zero,
    Half,
    Custom(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    /// Uniform with replacement.
    Random,
    /// Groups 0, 1, .., K-1, 0, ..
    RoundRobin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScmfConfig {
    pub eps_env: f64,
    pub eps_cost: f64,
    /// Update budget; `None` means 200 updates per group.
    pub max_iters: Option<usize>,
    pub eta: f64,
    pub init_env: InitEnv,
    pub selection: Selection,
    pub seed: RngSeed,
    pub engine: Engine,
}

impl Default for ScmfConfig {
    fn default() -> Self {
        Self {
            eps_env: 1e-4,
            eps_cost: 1e-4,
            max_iters: None,
            eta: 1.0,
            init_env: InitEnv::Zero,
            selection: Selection::Random,
            seed: RngSeed(0),
            engine: Engine::default(),
        }
    }
}

impl ScmfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_env > 0.0 && self.eps_cost > 0.0) {
            return invalid("convergence thresholds must be positive");
        }
        if !(self.eta >= 0.0 && self.eta <= MAX_ETA) {
            return invalid(format!("eta must lie in [0, {MAX_ETA}], got {}", self.eta));
        }
        if self.max_iters == Some(0) {
            return invalid("max_iters must be positive");
        }
        Ok(())
    }

    pub fn max_iters_for(&self, k: usize) -> usize {
        self.max_iters.unwrap_or(200 * k)
    }

    pub fn initial_environment(&self, n: usize, basis: Basis) -> Result<Environment> {
        match &self.init_env {
            InitEnv::Zero => Ok(Environment::zeros(n, basis)),
            InitEnv::Half => Environment::filled(n, 0.5, basis),
            InitEnv::Custom(v) => {
                if v.len() != n {
                    return invalid(format!("custom initial environment has length {}, need {n}", v.len()));
                }
                Environment::from_values(v.clone(), basis)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub subproblem: usize,
    pub env_metric: f64,
    pub cost_metric: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScmfTrace {
    pub records: Vec<TraceRecord>,
    pub converged: bool,
    pub iterations: usize,
}

impl ScmfTrace {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn env_metrics(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.env_metric).collect()
    }
}

#[derive(Debug, Clone)]
pub struct ScmfOutcome {
    pub environment: Environment,
    /// Latest expectations of every group, in partition order.
    pub expectations: Vec<ExpectationSet>,
    pub trace: ScmfTrace,
    pub energy: f64,
}

fn relative_change(prev: f64, next: f64) -> f64 {
    if next.abs() < ZERO_GUARD {
        (next - prev).abs()
    } else {
        (1.0 - prev / next).abs()
    }
}

/// `(max_i |1 - prev_i / next_i|, |1 - prev_cost / next_cost|)`, falling back to
/// absolute differences where the new value is (numerically) zero.
pub fn convergence_metrics(prev_env: &[f64], next_env: &[f64], prev_cost: f64, next_cost: f64) -> (f64, f64) {
    assert_eq!(prev_env.len(), next_env.len(), "environment lengths differ");
    let env = prev_env.iter().zip(next_env).map(|(&a, &b)| relative_change(a, b)).fold(0.0, f64::max);
    (env, relative_change(prev_cost, next_cost))
}

/// `eta * e`, clamped into the basis range.
pub fn scale_environment(env: &Environment, eta: f64) -> Environment {
    let basis = env.basis();
    let values = env.values().iter().map(|&x| basis.clamp(eta * x)).collect();
    Environment::from_values(values, basis).expect("clamped values are in range")
}

/// Iterates the environment to self-consistency at fixed angles.
///
/// Non-convergence within the budget is reported through `trace.converged`,
/// not as an error.
pub fn run_self_consistency(problem: &IsingProblem, partition: &Partition, params: &QaoaParams, config: &ScmfConfig) -> Result<ScmfOutcome> {
    config.validate()?;
    if partition.n() != problem.n() {
        return invalid(format!("partition covers n={}, problem has n={}", partition.n(), problem.n()));
    }
    config.engine.check(partition, params.p())?;
    let k = partition.k();
    let max_iters = config.max_iters_for(k);
    let mut env = config.initial_environment(problem.n(), problem.basis())?;
    let mut expectations: Vec<ExpectationSet> = partition.groups().iter().map(|g| ExpectationSet::from_environment(&env, g)).collect();
    let mut cost = factorized_energy(problem, partition, &expectations)?;
    let mut rng = config.seed.rng();
    let mut last_update: Vec<Option<usize>> = vec![None; k];
    let mut trace = ScmfTrace::default();

    for it in 0..max_iters {
        let g = match config.selection {
            Selection::Random => rng.random_range(0..k),
            Selection::RoundRobin => it % k,
        };
        let dressed = scale_environment(&env, config.eta);
        let spec = SubproblemSpec::from_problem(problem, partition, &dressed, g)?;
        let ex = config.engine.evaluate(&spec, params)?;
        let prev = env.clone();
        env.assign(partition.group(g), ex.one_body());
        expectations[g] = ex;
        let next_cost = factorized_energy(problem, partition, &expectations)?;
        let (env_metric, cost_metric) = convergence_metrics(prev.values(), env.values(), cost, next_cost);
        cost = next_cost;
        trace.records.push(TraceRecord { iteration: it + 1, subproblem: g, env_metric, cost_metric, energy: cost });
        last_update[g] = Some(it);

        if let Some(start) = window_start(&last_update) {
            let window = &trace.records[start..];
            if window.iter().all(|r| r.env_metric < config.eps_env && r.cost_metric < config.eps_cost) {
                trace.converged = true;
                break;
            }
        }
    }
    trace.iterations = trace.records.len();
    Ok(ScmfOutcome { environment: env, expectations, trace, energy: cost })
}

/// Index of the oldest most-recent update across groups, once all were visited.
fn window_start(last_update: &[Option<usize>]) -> Option<usize> {
    last_update.iter().try_fold(usize::MAX, |acc, x| x.map(|v| acc.min(v)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Leading iterations excluded from the fit.
    pub burn_in: usize,
    /// Fit only the last `window` iterations of the common range.
    pub window: Option<usize>,
    /// Metrics below this are floored before taking logs.
    pub floor: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { burn_in: 0, window: None, floor: 1e-300 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceFit {
    /// Decay rate `f` of the mean log environment metric per iteration.
    pub rate: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// `(iteration, E[log metric])` for every fitted iteration.
    pub points: Vec<(usize, f64)>,
    /// Number of samples that were raised to the floor.
    pub floored: usize,
}

/// Least-squares fit of `E[log metric] ~ c - f * iteration` across an ensemble.
pub fn fit_convergence_rate(traces: &[ScmfTrace], cfg: &FitConfig) -> Result<ConvergenceFit> {
    if traces.len() < 2 {
        return invalid("need at least two traces");
    }
    let common = traces.iter().map(|t| t.records.len()).min().unwrap_or(0);
    if common < cfg.burn_in + 10 {
        return invalid(format!("need at least 10 iterations after burn-in {}, shortest trace has {common}", cfg.burn_in));
    }
    let start = match cfg.window {
        Some(w) => cfg.burn_in.max(common.saturating_sub(w)),
        None => cfg.burn_in,
    };
    let mut floored = 0;
    let points: Vec<(usize, f64)> = (start..common)
        .map(|l| {
            let mean = traces
                .iter()
                .map(|t| {
                    let x = t.records[l].env_metric;
                    if x < cfg.floor {
                        floored += 1;
                        cfg.floor.ln()
                    } else {
                        x.ln()
                    }
                })
                .sum::<f64>()
                / traces.len() as f64;
            (l + 1, mean)
        })
        .collect();
    let (slope, intercept, r_squared) = linear_fit(&points);
    Ok(ConvergenceFit { rate: -slope, intercept, r_squared, points, floored })
}

fn linear_fit(points: &[(usize, f64)]) -> (f64, f64, f64) {
    let m = points.len() as f64;
    let mx = points.iter().map(|p| p.0 as f64).sum::<f64>() / m;
    let my = points.iter().map(|p| p.1).sum::<f64>() / m;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (dx, dy) = (x as f64 - mx, y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, my - slope * mx, r2)
}

/// Depth-one fixed-point map: `F_i(e) = -sin(2b) sin(2g h~_i(e)) prod_{j in S(i)} cos(2g W_ij)`.
pub struct FixedPointMap<'a> {
    problem: &'a IsingProblem,
    partition: &'a Partition,
    gamma: f64,
    amplitude: Vec<f64>,
}

impl<'a> FixedPointMap<'a> {
    pub fn new(problem: &'a IsingProblem, partition: &'a Partition, gamma: f64, beta: f64) -> Result<Self> {
        if problem.basis() != Basis::Spin {
            return Err(Error::Precondition("the depth-one fixed-point system is defined in the spin basis".into()));
        }
        if partition.n() != problem.n() {
            return invalid("partition and problem sizes differ");
        }
        let s2b = (2.0 * beta).sin();
        let amplitude = (0..problem.n())
            .map(|i| {
                let row = problem.w().row(i);
                let prod: f64 = partition.group(partition.group_of(i)).iter().filter(|&&j| j != i).map(|&j| (2.0 * gamma * row[j]).cos()).product();
                -s2b * prod
            })
            .collect();
        Ok(Self { problem, partition, gamma, amplitude })
    }

    pub fn apply(&self, e: &[f64]) -> Vec<f64> {
        let n = self.problem.n();
        (0..n)
            .map(|i| {
                let gi = self.partition.group_of(i);
                let row = self.problem.w().row(i);
                let mut field = self.problem.h()[i];
                for j in 0..n {
                    if self.partition.group_of(j) != gi {
                        field += row[j] * e[j];
                    }
                }
                self.amplitude[i] * (2.0 * self.gamma * field).sin()
            })
            .collect()
    }

    /// `e - F(e)`.
    pub fn residual(&self, e: &[f64]) -> Vec<f64> {
        self.apply(e).iter().zip(e).map(|(f, x)| x - f).collect()
    }
}

pub fn fixed_point_residual(problem: &IsingProblem, partition: &Partition, env: &Environment, gamma: f64, beta: f64) -> Result<Vec<f64>> {
    Ok(FixedPointMap::new(problem, partition, gamma, beta)?.residual(env.values()))
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultistartConfig {
    pub starts: usize,
    pub damping: f64,
    /// Damped iterations without residual improvement before switching to Newton.
    pub stall_iters: usize,
    pub max_damped_iters: usize,
    pub max_newton_iters: usize,
    pub tolerance: f64,
    /// Max-norm distance under which two solutions are the same.
    pub dedup_distance: f64,
    pub fd_step: f64,
}

impl Default for MultistartConfig {
    fn default() -> Self {
        Self {
            starts: 500,
            damping: 0.5,
            stall_iters: 200,
            max_damped_iters: 20_000,
            max_newton_iters: 100,
            tolerance: 1e-8,
            dedup_distance: 1e-3,
            fd_step: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointSolution {
    pub environment: Environment,
    pub residual: f64,
    pub energy: f64,
    /// Number of starts that landed on this solution.
    pub hits: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultistartReport {
    /// Distinct solutions, lowest energy first.
    pub solutions: Vec<FixedPointSolution>,
    pub converged_starts: usize,
    pub dropped: usize,
}

impl MultistartReport {
    pub fn min_energy(&self) -> Option<f64> {
        self.solutions.first().map(|s| s.energy)
    }
}

/// Factorized energy of the depth-one product state dressed by `env`.
pub fn energy_at_environment(problem: &IsingProblem, partition: &Partition, env: &Environment, gamma: f64, beta: f64) -> Result<f64> {
    let sets = (0..partition.k())
        .map(|k| SubproblemSpec::from_problem(problem, partition, env, k).map(|s| analytic_expectations_p1(&s, gamma, beta)))
        .collect::<Result<Vec<_>>>()?;
    factorized_energy(problem, partition, &sets)
}

/// Solves the depth-one self-consistency equations from many random starts.
pub fn solve_fixed_point_multistart(
    problem: &IsingProblem,
    partition: &Partition,
    gamma: f64,
    beta: f64,
    config: &MultistartConfig,
    seed: RngSeed,
) -> Result<MultistartReport> {
    if !(config.damping > 0.0 && config.damping <= 1.0) {
        return invalid("damping must lie in (0, 1]");
    }
    let map = FixedPointMap::new(problem, partition, gamma, beta)?;
    let n = problem.n();
    let mut report = MultistartReport { solutions: Vec::new(), converged_starts: 0, dropped: 0 };
    for s in 0..config.starts {
        let mut rng = seed.fork(s as u64).rng();
        let start: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let Some((e, residual)) = solve_one(&map, start, config) else {
            report.dropped += 1;
            continue;
        };
        report.converged_starts += 1;
        if let Some(sol) = report
            .solutions
            .iter_mut()
            .find(|sol| sol.environment.values().iter().zip(&e).all(|(a, b)| (a - b).abs() <= config.dedup_distance))
        {
            sol.hits += 1;
            continue;
        }
        let environment = Environment::from_values(e.iter().map(|x| x.clamp(-1.0, 1.0)).collect(), Basis::Spin)?;
        let energy = energy_at_environment(problem, partition, &environment, gamma, beta)?;
        report.solutions.push(FixedPointSolution { environment, residual, energy, hits: 1 });
    }
    report.solutions.sort_by(|a, b| a.energy.total_cmp(&b.energy));
    Ok(report)
}

fn solve_one(map: &FixedPointMap<'_>, mut e: Vec<f64>, cfg: &MultistartConfig) -> Option<(Vec<f64>, f64)> {
    let mut best = f64::INFINITY;
    let mut stall = 0;
    for _ in 0..cfg.max_damped_iters {
        let f = map.apply(&e);
        let r = e.iter().zip(&f).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        if r < cfg.tolerance {
            return Some((e, r));
        }
        if r < best {
            best = r;
            stall = 0;
        } else {
            stall += 1;
            if stall >= cfg.stall_iters {
                break;
            }
        }
        for (x, y) in e.iter_mut().zip(&f) {
            *x += cfg.damping * (y - *x);
        }
    }
    newton(map, e, cfg)
}

/// Newton iteration on `e - F(e) = 0` with a forward-difference Jacobian and backtracking.
fn newton(map: &FixedPointMap<'_>, mut e: Vec<f64>, cfg: &MultistartConfig) -> Option<(Vec<f64>, f64)> {
    let n = e.len();
    let mut res = map.residual(&e);
    let mut r = max_abs(&res);
    for _ in 0..cfg.max_newton_iters {
        if r < cfg.tolerance {
            return Some((e, r));
        }
        let f0 = map.apply(&e);
        let mut jac = DMatrix::<f64>::identity(n, n);
        for j in 0..n {
            let mut ej = e.clone();
            ej[j] += cfg.fd_step;
            let fj = map.apply(&ej);
            for i in 0..n {
                jac[(i, j)] -= (fj[i] - f0[i]) / cfg.fd_step;
            }
        }
        let rhs = DVector::from_iterator(n, res.iter().map(|x| -x));
        let step = jac.lu().solve(&rhs)?;
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = e.iter().zip(step.iter()).map(|(x, d)| x + t * d).collect();
            let trial_res = map.residual(&trial);
            let tr = max_abs(&trial_res);
            if tr < (1.0 - 1e-4 * t) * r || t < 1e-6 {
                e = trial;
                res = trial_res;
                r = tr;
                break;
            }
            t *= 0.5;
        }
    }
    (r < cfg.tolerance).then_some((e, r))
}
