//! Global candidates from subproblem samples, clique post-processing, and
//! classical baselines.

use std::io::Write;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::instances::CliqueGraph;
use crate::model::{Environment, IsingProblem, Partition, QaoaParams};
use crate::qaoa::{run_qaoa, sample, SubproblemSpec};
use crate::seed::RngSeed;

/// Offset added to vertex weights in weighted draws so all-zero pools stay valid.
const WEIGHT_EPS: f64 = 1e-12;

/// Default cap for exhaustive enumeration.
pub const BRUTE_FORCE_CAP: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionPool {
    partition: Partition,
    samples: Vec<Vec<Vec<bool>>>,
}

impl SolutionPool {
    /// `samples[k]` holds local bit strings ordered like `partition.group(k)`.
    pub fn new(partition: Partition, samples: Vec<Vec<Vec<bool>>>) -> Result<Self> {
        if samples.len() != partition.k() {
            return invalid(format!("pool has {} subproblems, partition has {}", samples.len(), partition.k()));
        }
        for (k, pool) in samples.iter().enumerate() {
            let m = partition.group(k).len();
            if let Some(bad) = pool.iter().find(|s| s.len() != m) {
                return invalid(format!("subproblem {k} sample has length {}, group size is {m}", bad.len()));
            }
        }
        Ok(Self { partition, samples })
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn samples(&self, k: usize) -> &[Vec<bool>] {
        &self.samples[k]
    }
}

/// Samples every subproblem state, with fields dressed by `env`.
pub fn sample_pool(problem: &IsingProblem, partition: &Partition, env: &Environment, params: &QaoaParams, shots: usize, seed: RngSeed, max_qubits: usize) -> Result<SolutionPool> {
    let samples = (0..partition.k())
        .map(|k| {
            let spec = SubproblemSpec::from_problem(problem, partition, env, k)?;
            let state = run_qaoa(&spec, params, max_qubits)?;
            Ok(sample(&state, shots, seed.fork(k as u64)))
        })
        .collect::<Result<Vec<_>>>()?;
    SolutionPool::new(partition.clone(), samples)
}

/// Draws one local sample per subproblem, uniformly and independently, and
/// scatters them to global positions.
pub fn concatenate_global(pool: &SolutionPool, count: usize, seed: RngSeed) -> Result<Vec<Vec<bool>>> {
    if let Some(k) = pool.samples.iter().position(|s| s.is_empty()) {
        return invalid(format!("subproblem {k} has an empty sample pool"));
    }
    let mut rng = seed.rng();
    let part = &pool.partition;
    Ok((0..count)
        .map(|_| {
            let mut global = vec![false; part.n()];
            for (k, local) in pool.samples.iter().enumerate() {
                let s = local.choose(&mut rng).expect("pool is nonempty");
                for (&i, &b) in part.group(k).iter().zip(s) {
                    global[i] = b;
                }
            }
            global
        })
        .collect())
}

fn weighted_pick(rng: &mut ChaCha8Rng, graph: &CliqueGraph, candidates: &[usize]) -> usize {
    let w = graph.weights();
    let total: f64 = candidates.iter().map(|&i| w[i].max(0.0) + WEIGHT_EPS).sum();
    let mut x = rng.random::<f64>() * total;
    for &i in candidates {
        x -= w[i].max(0.0) + WEIGHT_EPS;
        if x < 0.0 {
            return i;
        }
    }
    *candidates.last().expect("candidates are nonempty")
}

/// Removes selected vertices until the rest induce a clique.
///
/// Each step drops a vertex of minimum induced degree, preferring the lowest
/// weight, and then a seeded random choice among exact ties.
pub fn greedy_clique_repair(graph: &CliqueGraph, assignment: &[bool], seed: RngSeed) -> Result<Vec<bool>> {
    if assignment.len() != graph.n() {
        return invalid(format!("assignment has length {}, graph has {} vertices", assignment.len(), graph.n()));
    }
    let mut rng = seed.rng();
    let mut selected: Vec<usize> = (0..graph.n()).filter(|&i| assignment[i]).collect();
    loop {
        let degree: Vec<usize> = selected.iter().map(|&i| selected.iter().filter(|&&j| graph.adjacent(i, j)).count()).collect();
        if degree.iter().all(|&d| d + 1 == selected.len()) {
            break;
        }
        let dmin = *degree.iter().min().expect("non-clique selection is nonempty");
        let by_degree: Vec<usize> = (0..selected.len()).filter(|&a| degree[a] == dmin).collect();
        let wmin = by_degree.iter().map(|&a| graph.weights()[selected[a]]).fold(f64::INFINITY, f64::min);
        let ties: Vec<usize> = by_degree.into_iter().filter(|&a| graph.weights()[selected[a]] == wmin).collect();
        let drop = *ties.choose(&mut rng).expect("ties are nonempty");
        selected.remove(drop);
    }
    let mut out = vec![false; graph.n()];
    for i in selected {
        out[i] = true;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalSearchOutcome {
    /// Heaviest clique seen along the way.
    pub best: Vec<bool>,
    pub best_weight: f64,
    /// Clique after the last move.
    pub last: Vec<bool>,
    /// Weight after every performed move, starting with the input.
    pub trajectory: Vec<f64>,
}

/// Grows a clique by weighted additions, falling back to one-for-one swaps.
///
/// Stops early when neither an addition nor a swap candidate exists.
pub fn clique_local_search(graph: &CliqueGraph, clique: &[bool], iters: usize, seed: RngSeed) -> Result<LocalSearchOutcome> {
    if clique.len() != graph.n() {
        return invalid(format!("assignment has length {}, graph has {} vertices", clique.len(), graph.n()));
    }
    if !graph.is_clique(clique) {
        return invalid("local search needs a clique as input");
    }
    let mut rng = seed.rng();
    let mut cur = clique.to_vec();
    let mut weight = graph.weight_of(&cur);
    let mut out = LocalSearchOutcome { best: cur.clone(), best_weight: weight, last: Vec::new(), trajectory: vec![weight] };
    for _ in 0..iters {
        let members: Vec<usize> = (0..graph.n()).filter(|&i| cur[i]).collect();
        let mut add = Vec::new();
        let mut swap = Vec::new();
        for v in (0..graph.n()).filter(|&v| !cur[v]) {
            let missing: Vec<usize> = members.iter().copied().filter(|&u| !graph.adjacent(u, v)).take(2).collect();
            match missing.len() {
                0 => add.push(v),
                1 => swap.push((v, missing[0])),
                _ => {}
            }
        }
        if !add.is_empty() {
            let v = weighted_pick(&mut rng, graph, &add);
            cur[v] = true;
        } else if !swap.is_empty() {
            let ins: Vec<usize> = swap.iter().map(|s| s.0).collect();
            let v = weighted_pick(&mut rng, graph, &ins);
            let u = swap.iter().find(|s| s.0 == v).expect("picked from pool").1;
            cur[v] = true;
            cur[u] = false;
        } else {
            break;
        }
        weight = graph.weight_of(&cur);
        out.trajectory.push(weight);
        if weight > out.best_weight {
            out.best_weight = weight;
            out.best = cur.clone();
        }
    }
    out.last = cur;
    Ok(out)
}

/// Maximum-weight clique by enumerating vertex subsets.
pub fn max_weight_clique(graph: &CliqueGraph) -> Result<(Vec<bool>, f64)> {
    let n = graph.n();
    if n > BRUTE_FORCE_CAP {
        return Err(Error::ResourceLimit(format!("exhaustive clique search over {n} vertices exceeds cap {BRUTE_FORCE_CAP}")));
    }
    let mut nbr = vec![0u32; n];
    for (i, j) in graph.edges() {
        nbr[i] |= 1 << j;
        nbr[j] |= 1 << i;
    }
    let mut is_clique = vec![false; 1 << n];
    let mut weight = vec![0.0; 1 << n];
    is_clique[0] = true;
    let (mut best_mask, mut best_w) = (0usize, 0.0);
    for mask in 1usize..1 << n {
        let low = mask.trailing_zeros() as usize;
        let rest = mask & (mask - 1);
        is_clique[mask] = is_clique[rest] && (nbr[low] as usize & rest) == rest;
        weight[mask] = weight[rest] + graph.weights()[low];
        if is_clique[mask] && weight[mask] > best_w {
            best_w = weight[mask];
            best_mask = mask;
        }
    }
    Ok(((0..n).map(|i| best_mask >> i & 1 == 1).collect(), best_w))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealSchedule {
    pub t_initial: f64,
    pub t_final: f64,
    pub sweeps: usize,
    pub moves_per_sweep: usize,
    pub seed: RngSeed,
}

impl AnnealSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_final > 0.0 && self.t_initial >= self.t_final) {
            return invalid(format!("need t_initial >= t_final > 0, got {} and {}", self.t_initial, self.t_final));
        }
        Ok(())
    }

    /// Starts at twice the spread of random-assignment energies and cools
    /// geometrically to 1e-2 over 1000 sweeps of n moves.
    pub fn auto(problem: &IsingProblem, seed: RngSeed) -> Self {
        let mut rng = seed.fork(1).rng();
        let energies: Vec<f64> = (0..200).map(|_| problem.classical_energy(&random_assignment(problem.n(), &mut rng)).expect("length matches")).collect();
        let mean = energies.iter().sum::<f64>() / energies.len() as f64;
        let sd = (energies.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (energies.len() - 1) as f64).sqrt();
        let t_final = 1e-2;
        let t_initial = if sd > 0.0 { (2.0 * sd).max(t_final) } else { 1.0 };
        Self { t_initial, t_final, sweeps: 1000, moves_per_sweep: problem.n().max(1), seed }
    }
}

pub fn random_assignment<R: Rng>(n: usize, rng: &mut R) -> Vec<bool> {
    (0..n).map(|_| rng.random::<bool>()).collect()
}

/// Energy bookkeeping for single-bit flips.
struct FlipState<'a> {
    problem: &'a IsingProblem,
    bits: Vec<bool>,
    values: Vec<f64>,
    /// `sum_j W_ij v_j`
    coupling: Vec<f64>,
}

impl<'a> FlipState<'a> {
    fn new(problem: &'a IsingProblem, bits: Vec<bool>) -> Self {
        let values = problem.values(&bits);
        let coupling = (0..problem.n()).map(|i| problem.w().row(i).iter().zip(&values).map(|(w, v)| w * v).sum()).collect();
        Self { problem, bits, values, coupling }
    }

    fn delta(&self, i: usize) -> f64 {
        let dv = self.problem.basis().value(!self.bits[i]) - self.values[i];
        dv * (self.problem.h()[i] + self.coupling[i])
    }

    fn flip(&mut self, i: usize) {
        let nv = self.problem.basis().value(!self.bits[i]);
        let dv = nv - self.values[i];
        self.bits[i] = !self.bits[i];
        self.values[i] = nv;
        for (c, w) in self.coupling.iter_mut().zip(self.problem.w().row(i)) {
            *c += w * dv;
        }
    }
}

/// Metropolis single-flip annealing; returns the best assignment seen.
pub fn simulated_annealing(problem: &IsingProblem, schedule: &AnnealSchedule) -> Result<(Vec<bool>, f64)> {
    schedule.validate()?;
    let n = problem.n();
    let mut rng = schedule.seed.rng();
    let start = random_assignment(n, &mut rng);
    let mut energy = problem.classical_energy(&start)?;
    let mut state = FlipState::new(problem, start);
    let mut best = (state.bits.clone(), energy);
    if n == 0 {
        return Ok(best);
    }
    let ratio = schedule.t_final / schedule.t_initial;
    for s in 0..schedule.sweeps {
        let frac = if schedule.sweeps > 1 { s as f64 / (schedule.sweeps - 1) as f64 } else { 1.0 };
        let t = schedule.t_initial * ratio.powf(frac);
        for _ in 0..schedule.moves_per_sweep {
            let i = rng.random_range(0..n);
            let d = state.delta(i);
            if d <= 0.0 || rng.random::<f64>() < (-d / t).exp() {
                state.flip(i);
                energy += d;
                if energy < best.1 - 1e-12 {
                    best = (state.bits.clone(), energy);
                }
            }
        }
    }
    let e = problem.classical_energy(&best.0)?;
    Ok((best.0, e))
}

/// Exhaustive minimum over all assignments; ties go to the lexicographically
/// smallest bit string.
pub fn brute_force(problem: &IsingProblem, cap: usize) -> Result<(Vec<bool>, f64)> {
    let n = problem.n();
    if n > cap || n >= usize::BITS as usize {
        return Err(Error::ResourceLimit(format!("exhaustive search over n={n} exceeds cap {cap}")));
    }
    let mut state = FlipState::new(problem, vec![false; n]);
    let mut energy = problem.classical_energy(&state.bits)?;
    let scale = problem.h().iter().map(|x| x.abs()).sum::<f64>() + problem.edges().iter().map(|e| e.2.abs()).sum::<f64>();
    let tol = 1e-9 * scale.max(1.0);
    let mut best = (state.bits.clone(), energy);
    for step in 1usize..1 << n {
        let i = step.trailing_zeros() as usize;
        energy += state.delta(i);
        state.flip(i);
        if energy < best.1 - tol || (energy <= best.1 + tol && state.bits < best.0) {
            best = (state.bits.clone(), energy.min(best.1));
        }
    }
    let e = problem.classical_energy(&best.0)?;
    Ok((best.0, e))
}

/// Steepest single-flip descent from a random assignment.
pub fn greedy_descent(problem: &IsingProblem, seed: RngSeed) -> (Vec<bool>, f64) {
    let mut rng = seed.rng();
    let mut state = FlipState::new(problem, random_assignment(problem.n(), &mut rng));
    loop {
        let best = (0..problem.n()).map(|i| (i, state.delta(i))).min_by(|a, b| a.1.total_cmp(&b.1));
        match best {
            Some((i, d)) if d < -1e-12 => state.flip(i),
            _ => break,
        }
    }
    let e = problem.classical_energy(&state.bits).expect("length matches");
    (state.bits, e)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleRow {
    pub sample_id: usize,
    pub raw_energy: f64,
    pub repaired_energy: f64,
    pub clique_size: usize,
    pub clique_weight: f64,
}

pub fn write_samples_csv<W: Write>(rows: &[SampleRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{break_z2_symmetry, generate_sk, random_graph};
    use crate::model::{Basis, SymMatrix};

    fn path3() -> CliqueGraph {
        CliqueGraph::new(vec![1.0, 2.0, 3.0], &[(0, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn repair_examples() {
        let g = path3();
        assert_eq!(greedy_clique_repair(&g, &[true, true, true], RngSeed(0)).unwrap(), vec![false, true, true]);
        assert_eq!(greedy_clique_repair(&g, &[true, true, false], RngSeed(0)).unwrap(), vec![true, true, false]);
        assert_eq!(greedy_clique_repair(&g, &[false; 3], RngSeed(0)).unwrap(), vec![false; 3]);
        assert!(greedy_clique_repair(&g, &[true], RngSeed(0)).is_err());
    }

    #[test]
    fn repair_breaks_exact_ties_randomly() {
        // two disconnected vertices of equal weight: either may survive
        let g = CliqueGraph::new(vec![1.0, 1.0], &[]).unwrap();
        let kept: std::collections::BTreeSet<Vec<bool>> = (0..32).map(|s| greedy_clique_repair(&g, &[true, true], RngSeed(s)).unwrap()).collect();
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn local_search_examples() {
        let tri = CliqueGraph::new(vec![1.0, 1.0, 1.0], &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let out = clique_local_search(&tri, &[true, false, false], 10, RngSeed(3)).unwrap();
        assert_eq!(out.best, vec![true; 3]);
        assert_eq!(out.trajectory.len(), 3);
        // maximal clique without swap candidates stays put
        let g = CliqueGraph::new(vec![1.0, 1.0, 1.0, 1.0], &[(0, 1), (2, 3)]).unwrap();
        let out = clique_local_search(&g, &[true, true, false, false], 10, RngSeed(3)).unwrap();
        assert_eq!(out.last, vec![true, true, false, false]);
        assert_eq!(out.trajectory.len(), 1);
        assert!(clique_local_search(&path3(), &[true, false, true], 5, RngSeed(0)).is_err());
    }

    #[test]
    fn local_search_swaps_into_heavier_vertex() {
        // clique {0,1}; vertex 2 is adjacent to 1 only and heavy
        let g = CliqueGraph::new(vec![1.0, 1.0, 5.0], &[(0, 1), (1, 2)]).unwrap();
        let out = clique_local_search(&g, &[true, true, false], 1, RngSeed(0)).unwrap();
        assert_eq!(out.last, vec![false, true, true]);
        assert_eq!(out.best_weight, 6.0);
    }

    #[test]
    fn max_weight_clique_small() {
        let g = CliqueGraph::new(vec![1.0, 2.0, 3.0, 0.5], &[(0, 1), (1, 2), (0, 2), (2, 3)]).unwrap();
        let (c, w) = max_weight_clique(&g).unwrap();
        assert_eq!(c, vec![true, true, true, false]);
        assert_eq!(w, 6.0);
    }

    #[test]
    fn concatenation_examples() {
        let part = Partition::contiguous(4, 2).unwrap();
        let pool = SolutionPool::new(part, vec![vec![vec![true, false]], vec![vec![false, true]]]).unwrap();
        let out = concatenate_global(&pool, 5, RngSeed(1)).unwrap();
        assert!(out.iter().all(|s| s == &vec![true, false, false, true]));
        let single = SolutionPool::new(Partition::single(2), vec![vec![vec![true, true], vec![false, true]]]).unwrap();
        for s in concatenate_global(&single, 20, RngSeed(2)).unwrap() {
            assert!(single.samples(0).contains(&s));
        }
        let empty = SolutionPool::new(Partition::contiguous(4, 2).unwrap(), vec![vec![vec![true, false]], vec![]]).unwrap();
        assert!(concatenate_global(&empty, 1, RngSeed(0)).is_err());
        assert!(SolutionPool::new(Partition::single(2), vec![vec![vec![true]]]).is_err());
    }

    #[test]
    fn brute_force_examples() {
        let one = IsingProblem::new(vec![1.0], SymMatrix::zeros(1), Basis::Spin).unwrap();
        assert_eq!(brute_force(&one, 24).unwrap(), (vec![true], -1.0));
        let two = IsingProblem::from_edges(vec![0.0, 0.0], &[(0, 1, -1.0)], Basis::Spin).unwrap();
        assert_eq!(brute_force(&two, 24).unwrap(), (vec![false, false], -1.0));
        assert!(matches!(brute_force(&two, 1), Err(Error::ResourceLimit(_))));
    }

    #[test]
    fn separable_problems_are_solved_exactly() {
        let p = IsingProblem::new(vec![0.5, -1.0, 2.0, -0.1, 0.3], SymMatrix::zeros(5), Basis::Spin).unwrap();
        let exact = brute_force(&p, 24).unwrap();
        let sched = AnnealSchedule { t_initial: 1.0, t_final: 0.01, sweeps: 50, moves_per_sweep: 5, seed: RngSeed(9) };
        assert_eq!(simulated_annealing(&p, &sched).unwrap(), exact);
        assert_eq!(greedy_descent(&p, RngSeed(4)), exact);
    }

    #[test]
    fn zero_sweeps_returns_initial_assignment() {
        let p = break_z2_symmetry(&generate_sk(9, RngSeed(1)).unwrap()).unwrap().problem;
        let sched = AnnealSchedule { t_initial: 1.0, t_final: 0.01, sweeps: 0, moves_per_sweep: 8, seed: RngSeed(5) };
        let (bits, e) = simulated_annealing(&p, &sched).unwrap();
        let expect = random_assignment(8, &mut RngSeed(5).rng());
        assert_eq!(bits, expect);
        assert_eq!(e, p.classical_energy(&expect).unwrap());
        assert!(AnnealSchedule { t_initial: 0.001, ..sched }.validate().is_err());
    }

    #[test]
    fn greedy_is_one_flip_stable() {
        let p = generate_sk(12, RngSeed(3)).unwrap();
        for s in 0..10 {
            let (bits, e) = greedy_descent(&p, RngSeed(s));
            for i in 0..12 {
                let mut b = bits.clone();
                b[i] = !b[i];
                assert!(p.classical_energy(&b).unwrap() >= e - 1e-12);
            }
        }
    }

    #[test]
    fn repair_on_random_graphs_gives_cliques() {
        for s in 0..200 {
            let g = random_graph(10, 0.5, 0.1, 1.0, RngSeed(s)).unwrap();
            let a = random_assignment(10, &mut RngSeed(s + 1000).rng());
            let c = greedy_clique_repair(&g, &a, RngSeed(s)).unwrap();
            assert!(g.is_clique(&c));
            assert!(c.iter().zip(&a).all(|(c, a)| !*c || *a));
        }
    }
}
