//! Outer loop over the shared QAOA angles.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{IsingProblem, Partition, QaoaParams};
use crate::scmf::{run_self_consistency, ScmfConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub energy: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Factorized energy after self-consistency at fixed angles.
///
/// A run that exhausts its budget still reports its last energy, with
/// `converged` cleared.
pub fn objective(problem: &IsingProblem, partition: &Partition, params: &QaoaParams, config: &ScmfConfig) -> Result<ObjectiveValue> {
    let out = run_self_consistency(problem, partition, params, config)?;
    Ok(ObjectiveValue { energy: out.energy, converged: out.trace.converged, iterations: out.trace.iterations })
}

/// Starting angles for SK instances.
///
/// `gamma = 1/(2 sqrt n)`; `beta` sits at pi/8 up to two groups and moves
/// linearly in `1 - 1/k` toward pi/4 at `k = n`. Deeper circuits get a ramp
/// with `gamma` increasing and `beta` decreasing across layers.
pub fn sk_heuristic_init(n: usize, k: usize, p: usize) -> Result<QaoaParams> {
    if n == 0 || p == 0 || k == 0 || k > n {
        return invalid(format!("need n >= 1, p >= 1 and 1 <= k <= n, got n={n}, k={k}, p={p}"));
    }
    let gamma = 0.5 / (n as f64).sqrt();
    let u = |x: usize| 1.0 - 1.0 / x as f64;
    let t = if k <= 2 || n <= 2 { 0.0 } else { ((u(k) - u(2)) / (u(n) - u(2))).clamp(0.0, 1.0) };
    let beta = PI / 8.0 * (1.0 + t);
    Ok(ramp(gamma, beta, p))
}

fn ramp(gamma: f64, beta: f64, p: usize) -> QaoaParams {
    let d = (p + 1) as f64;
    let gammas = (0..p).map(|l| gamma * 2.0 * (l + 1) as f64 / d).collect();
    let betas = (0..p).map(|l| beta * 2.0 * (p - l) as f64 / d).collect();
    QaoaParams::new(gammas, betas).expect("ramp has matching lengths")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Init {
    SkHeuristic,
    Custom(QaoaParams),
    /// Coarse p=1 scan whose best point anchors the layer ramp.
    Grid { steps: usize, gamma_max: f64, beta_max: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_evals: usize,
    pub simplex_scale: f64,
    pub xtol: f64,
    pub ftol: f64,
    pub init: Init,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { max_evals: 400, simplex_scale: 0.1, xtol: 1e-4, ftol: 1e-8, init: Init::SkHeuristic }
    }
}

impl OptimizerConfig {
    pub fn validate(&self, p: usize) -> Result<()> {
        if !(self.xtol > 0.0 && self.ftol > 0.0 && self.simplex_scale > 0.0) {
            return invalid("tolerances and simplex scale must be positive");
        }
        if self.max_evals < 2 * p + 1 {
            return invalid(format!("max_evals must be at least 2p+1 = {}", 2 * p + 1));
        }
        if let Init::Custom(params) = &self.init {
            if params.p() != p {
                return invalid(format!("custom initial angles have p={}, need p={p}", params.p()));
            }
        }
        if let Init::Grid { steps, .. } = self.init {
            if steps == 0 {
                return invalid("grid init needs at least one step");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub fx: f64,
    pub evals: usize,
    pub hit_max_evals: bool,
}

/// Minimizes `f` with the standard coefficients (1, 2, 1/2, 1/2).
///
/// The initial simplex is `x0` plus `scale` along each axis. Stops when the
/// simplex spread falls under both `xtol` and `ftol`, or after `max_evals`.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], scale: f64, max_evals: usize, xtol: f64, ftol: f64) -> Result<NelderMeadResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let d = x0.len();
    if d == 0 {
        return invalid("nelder_mead needs at least one variable");
    }
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| -> Result<f64> {
        *evals += 1;
        f(x)
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    simplex.push((x0.to_vec(), eval(x0, &mut evals)?));
    for i in 0..d {
        let mut x = x0.to_vec();
        x[i] += scale;
        let fx = eval(&x, &mut evals)?;
        simplex.push((x, fx));
    }

    let point = |c: &[f64], toward: &[f64], t: f64| -> Vec<f64> { c.iter().zip(toward).map(|(a, b)| a + t * (b - a)).collect() };

    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = &simplex[0];
        let xspread = simplex[1..].iter().flat_map(|(x, _)| x.iter().zip(&best.0).map(|(a, b)| (a - b).abs())).fold(0.0, f64::max);
        let fspread = simplex[1..].iter().map(|s| (s.1 - best.1).abs()).fold(0.0, f64::max);
        if xspread <= xtol && fspread <= ftol {
            break;
        }
        if evals >= max_evals {
            let (x, fx) = simplex.swap_remove(0);
            return Ok(NelderMeadResult { x, fx, evals, hit_max_evals: true });
        }

        let centroid: Vec<f64> = (0..d).map(|j| simplex[..d].iter().map(|s| s.0[j]).sum::<f64>() / d as f64).collect();
        let worst = simplex[d].clone();
        let xr = point(&centroid, &worst.0, -1.0);
        let fr = eval(&xr, &mut evals)?;
        if fr < simplex[0].1 {
            let xe = point(&centroid, &worst.0, -2.0);
            let fe = eval(&xe, &mut evals)?;
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < worst.1 {
            let xc = point(&centroid, &xr, 0.5);
            let fc = eval(&xc, &mut evals)?;
            (xc, fc)
        } else {
            let xc = point(&centroid, &worst.0, 0.5);
            let fc = eval(&xc, &mut evals)?;
            (xc, fc)
        };
        if fc < fr.min(worst.1) {
            simplex[d] = (xc, fc);
            continue;
        }
        let x_best = simplex[0].0.clone();
        for s in simplex.iter_mut().skip(1) {
            s.0 = point(&x_best, &s.0, 0.5);
            s.1 = eval(&s.0, &mut evals)?;
        }
    }
    let (x, fx) = simplex.swap_remove(0);
    Ok(NelderMeadResult { x, fx, evals, hit_max_evals: false })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub params: QaoaParams,
    pub energy: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult {
    pub params: QaoaParams,
    pub energy: f64,
    /// Whether self-consistency converged at the returned angles.
    pub converged: bool,
    /// Every objective evaluation, in order, including grid-init points.
    pub evals: Vec<EvalRecord>,
    pub hit_max_evals: bool,
}

pub fn initial_params(problem: &IsingProblem, partition: &Partition, p: usize, opt: &OptimizerConfig, scmf: &ScmfConfig, evals: &mut Vec<EvalRecord>) -> Result<QaoaParams> {
    match &opt.init {
        Init::SkHeuristic => sk_heuristic_init(problem.n(), partition.k(), p),
        Init::Custom(params) => Ok(params.clone()),
        &Init::Grid { steps, gamma_max, beta_max } => {
            let spec = GridSpec { gamma: (gamma_max / steps as f64, gamma_max), gamma_steps: steps, beta: (beta_max / steps as f64, beta_max), beta_steps: steps };
            let grid = scan_landscape(problem, partition, &spec, scmf)?;
            let mut best = (f64::INFINITY, 0.0, 0.0);
            for (i, &g) in grid.gammas.iter().enumerate() {
                for (j, &b) in grid.betas.iter().enumerate() {
                    let e = grid.energies[i][j];
                    evals.push(EvalRecord { params: QaoaParams::p1(g, b), energy: e, converged: grid.converged[i][j] });
                    if e < best.0 {
                        best = (e, g, b);
                    }
                }
            }
            Ok(ramp(best.1, best.2, p))
        }
    }
}

/// Nelder-Mead over the 2p angles, with self-consistency inside every evaluation.
pub fn optimize(problem: &IsingProblem, partition: &Partition, p: usize, opt: &OptimizerConfig, scmf: &ScmfConfig) -> Result<OptimizeResult> {
    if p == 0 {
        return invalid("p must be at least 1");
    }
    opt.validate(p)?;
    let mut evals = Vec::new();
    let x0 = initial_params(problem, partition, p, opt, scmf, &mut evals)?.to_flat();
    let nm = nelder_mead(
        |x| {
            let params = QaoaParams::from_flat(x)?;
            let v = objective(problem, partition, &params, scmf)?;
            evals.push(EvalRecord { params, energy: v.energy, converged: v.converged });
            Ok(v.energy)
        },
        &x0,
        opt.simplex_scale,
        opt.max_evals,
        opt.xtol,
        opt.ftol,
    )?;
    let params = QaoaParams::from_flat(&nm.x)?;
    let converged = evals.iter().rev().find(|r| r.params == params).map(|r| r.converged).unwrap_or(false);
    Ok(OptimizeResult { params, energy: nm.fx, converged, evals, hit_max_evals: nm.hit_max_evals })
}

/// Inclusive `(min, max)` ranges sampled at `steps` evenly spaced points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub gamma: (f64, f64),
    pub gamma_steps: usize,
    pub beta: (f64, f64),
    pub beta_steps: usize,
}

fn linspace((lo, hi): (f64, f64), steps: usize) -> Vec<f64> {
    if steps == 1 {
        return vec![lo];
    }
    (0..steps).map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64).collect()
}

impl GridSpec {
    pub fn gammas(&self) -> Vec<f64> {
        linspace(self.gamma, self.gamma_steps)
    }

    pub fn betas(&self) -> Vec<f64> {
        linspace(self.beta, self.beta_steps)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeGrid {
    pub gammas: Vec<f64>,
    pub betas: Vec<f64>,
    /// `energies[i][j]` at `(gammas[i], betas[j])`.
    pub energies: Vec<Vec<f64>>,
    pub converged: Vec<Vec<bool>>,
}

#[derive(Serialize)]
struct LandscapeRow {
    gamma: f64,
    beta: f64,
    energy: f64,
    converged: bool,
}

impl LandscapeGrid {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for (i, &gamma) in self.gammas.iter().enumerate() {
            for (j, &beta) in self.betas.iter().enumerate() {
                w.serialize(LandscapeRow { gamma, beta, energy: self.energies[i][j], converged: self.converged[i][j] })?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Self-consistent energy on a p=1 angle grid.
pub fn scan_landscape(problem: &IsingProblem, partition: &Partition, spec: &GridSpec, config: &ScmfConfig) -> Result<LandscapeGrid> {
    if spec.gamma_steps == 0 || spec.beta_steps == 0 {
        return invalid("landscape grid is empty");
    }
    let gammas = spec.gammas();
    let betas = spec.betas();
    let mut energies = Vec::with_capacity(gammas.len());
    let mut converged = Vec::with_capacity(gammas.len());
    for &g in &gammas {
        let mut erow = Vec::with_capacity(betas.len());
        let mut crow = Vec::with_capacity(betas.len());
        for &b in &betas {
            let v = objective(problem, partition, &QaoaParams::p1(g, b), config)?;
            erow.push(v.energy);
            crow.push(v.converged);
        }
        energies.push(erow);
        converged.push(crow);
    }
    Ok(LandscapeGrid { gammas, betas, energies, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{break_z2_symmetry, generate_sk, random_partition};
    use crate::model::{Basis, SymMatrix};
    use crate::qaoa::{expectations, run_qaoa, SubproblemSpec};
    use crate::seed::RngSeed;

    fn sk(n: usize, seed: u64) -> IsingProblem {
        break_z2_symmetry(&generate_sk(n + 1, RngSeed(seed)).unwrap()).unwrap().problem
    }

    #[test]
    fn heuristic_examples() {
        let a = sk_heuristic_init(64, 1, 1).unwrap();
        assert_eq!(a.gammas(), &[0.0625]);
        assert_eq!(a.betas(), &[PI / 8.0]);
        assert_eq!(sk_heuristic_init(64, 2, 1).unwrap().betas(), &[PI / 8.0]);
        assert!((sk_heuristic_init(16, 16, 1).unwrap().betas()[0] - PI / 4.0).abs() < 1e-15);
        let mid = sk_heuristic_init(16, 4, 1).unwrap().betas()[0];
        assert!(mid > PI / 8.0 && mid < PI / 4.0);
        let r = sk_heuristic_init(64, 1, 3).unwrap();
        assert!(r.gammas().windows(2).all(|w| w[0] < w[1]));
        assert!(r.betas().windows(2).all(|w| w[0] > w[1]));
        assert!(sk_heuristic_init(4, 5, 1).is_err());
        assert!(sk_heuristic_init(4, 1, 0).is_err());
    }

    #[test]
    fn zero_gamma_gives_zero_energy() {
        let p = sk(8, 2);
        let part = random_partition(8, 2, RngSeed(1)).unwrap();
        let v = objective(&p, &part, &QaoaParams::p1(0.0, 0.7), &ScmfConfig::default()).unwrap();
        assert!(v.energy.abs() < 1e-12);
    }

    #[test]
    fn single_group_matches_direct_qaoa() {
        let p = sk(7, 9);
        let params = QaoaParams::new(vec![0.1, 0.2], vec![0.4, 0.2]).unwrap();
        let v = objective(&p, &Partition::single(7), &params, &ScmfConfig::default()).unwrap();
        let spec = SubproblemSpec::new((0..7).collect(), p.h().to_vec(), p.w().clone(), Basis::Spin).unwrap();
        let direct = spec.energy(&expectations(&run_qaoa(&spec, &params, 24).unwrap(), &spec));
        assert!((v.energy - direct).abs() < 1e-12);
    }

    #[test]
    fn single_qubit_optimum() {
        let p = IsingProblem::new(vec![1.0], SymMatrix::zeros(1), Basis::Spin).unwrap();
        let opt = OptimizerConfig { init: Init::Custom(QaoaParams::p1(0.3, 0.2)), xtol: 1e-8, ftol: 1e-14, ..Default::default() };
        let r = optimize(&p, &Partition::single(1), 1, &opt, &ScmfConfig::default()).unwrap();
        assert!((r.energy + 1.0).abs() < 1e-8, "{}", r.energy);
        let (g, b) = (r.params.gammas()[0], r.params.betas()[0]);
        assert!(((2.0 * g).sin() * (2.0 * b).sin() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn nelder_mead_quadratic_bowl() {
        let f = |x: &[f64]| Ok((x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2) + 0.5 * (x[2] - 0.5).powi(2) + 2.0);
        let r = nelder_mead(f, &[0.0, 0.0, 0.0], 0.5, 5000, 1e-9, 1e-14).unwrap();
        assert!(!r.hit_max_evals);
        assert!((r.fx - 2.0).abs() < 1e-12);
        for (a, b) in r.x.iter().zip([1.0, -2.0, 0.5]) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn nelder_mead_rosenbrock_and_budget() {
        let rosen = |x: &[f64]| Ok(100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2));
        let r = nelder_mead(rosen, &[-1.2, 1.0], 0.1, 10_000, 1e-10, 1e-16).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5);
        let capped = nelder_mead(rosen, &[-1.2, 1.0], 0.1, 20, 1e-10, 1e-16).unwrap();
        assert!(capped.hit_max_evals);
        assert!(capped.fx <= 24.2);
    }

    #[test]
    fn optimize_never_worse_than_initial_simplex() {
        let p = sk(8, 5);
        let part = random_partition(8, 2, RngSeed(3)).unwrap();
        let opt = OptimizerConfig { max_evals: 60, ..Default::default() };
        let r = optimize(&p, &part, 1, &opt, &ScmfConfig::default()).unwrap();
        let simplex_best = r.evals[..3].iter().map(|e| e.energy).fold(f64::INFINITY, f64::min);
        assert!(r.energy <= simplex_best);
        let again = optimize(&p, &part, 1, &opt, &ScmfConfig::default()).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn grid_init_records_grid_points() {
        let p = sk(6, 5);
        let part = random_partition(6, 2, RngSeed(3)).unwrap();
        let opt = OptimizerConfig { max_evals: 30, init: Init::Grid { steps: 4, gamma_max: 1.0, beta_max: 0.8 }, ..Default::default() };
        let r = optimize(&p, &part, 2, &opt, &ScmfConfig::default()).unwrap();
        assert!(r.evals.len() >= 16);
        let grid_best = r.evals[..16].iter().map(|e| e.energy).fold(f64::INFINITY, f64::min);
        assert!(r.energy <= grid_best + 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(OptimizerConfig { max_evals: 4, ..Default::default() }.validate(2).is_err());
        assert!(OptimizerConfig { xtol: 0.0, ..Default::default() }.validate(1).is_err());
        let custom = OptimizerConfig { init: Init::Custom(QaoaParams::p1(0.1, 0.1)), ..Default::default() };
        assert!(custom.validate(2).is_err());
    }

    #[test]
    fn landscape_sign_symmetry() {
        let p = sk(10, 8);
        let part = random_partition(10, 2, RngSeed(4)).unwrap();
        let spec = GridSpec { gamma: (-0.6, 0.6), gamma_steps: 5, beta: (-0.7, 0.7), beta_steps: 5 };
        let grid = scan_landscape(&p, &part, &spec, &ScmfConfig::default()).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let (a, b) = (grid.energies[i][j], grid.energies[4 - i][4 - j]);
                // the two runs follow the same update order, so they reach the same fixed point
                assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
        }
        assert_eq!(grid, scan_landscape(&p, &part, &spec, &ScmfConfig::default()).unwrap());
    }

    #[test]
    fn landscape_csv_and_single_point() {
        let p = sk(4, 1);
        let spec = GridSpec { gamma: (0.2, 0.9), gamma_steps: 1, beta: (0.3, 0.9), beta_steps: 1 };
        let grid = scan_landscape(&p, &Partition::single(4), &spec, &ScmfConfig::default()).unwrap();
        assert_eq!(grid.energies.len(), 1);
        let direct = objective(&p, &Partition::single(4), &QaoaParams::p1(0.2, 0.3), &ScmfConfig::default()).unwrap();
        assert_eq!(grid.energies[0][0], direct.energy);
        let mut buf = Vec::new();
        grid.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("gamma,beta,energy,converged\n"));
    }
}
