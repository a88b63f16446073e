//! Instance construction and seed fan-out shared by experiments and checks.
//!
//! Every random quantity derives from one root seed:
//!
//! | stream                         | path                      |
//! |--------------------------------|---------------------------|
//! | SK couplings of instance `i`   | `[INSTANCE, n, i]`        |
//! | partition of instance `i`      | `[PARTITION, n, k, i]`    |
//! | run `j` (loop order, sampling) | `[RUN, n, k, i, j]`       |
//! | random graph `i`               | `[GRAPH, n, i]`           |

use scmf_core::instances::{break_z2_symmetry, generate_sk, random_partition, ReducedProblem};
use scmf_core::qaoa::Engine;
use scmf_core::{Partition, RngSeed};

pub const INSTANCE: u64 = 1;
pub const PARTITION: u64 = 2;
pub const RUN: u64 = 3;
pub const GRAPH: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub root: RngSeed,
}

impl Seeds {
    pub fn new(root: u64) -> Self {
        Self { root: RngSeed(root) }
    }

    pub fn instance(&self, n: usize, i: usize) -> RngSeed {
        self.root.fork_path(&[INSTANCE, n as u64, i as u64])
    }

    pub fn partition(&self, n: usize, k: usize, i: usize) -> RngSeed {
        self.root.fork_path(&[PARTITION, n as u64, k as u64, i as u64])
    }

    pub fn run(&self, n: usize, k: usize, i: usize, j: usize) -> RngSeed {
        self.root.fork_path(&[RUN, n as u64, k as u64, i as u64, j as u64])
    }

    pub fn graph(&self, n: usize, i: usize) -> RngSeed {
        self.root.fork_path(&[GRAPH, n as u64, i as u64])
    }
}

/// An `n`-spin SK instance with the last spin pinned, plus a balanced random
/// partition of the remaining `n - 1` variables.
#[derive(Debug, Clone)]
pub struct SkInstance {
    pub n: usize,
    pub reduced: ReducedProblem,
    pub partition: Partition,
}

pub fn sk_instance(seeds: &Seeds, n: usize, k: usize, i: usize) -> scmf_core::Result<SkInstance> {
    let full = generate_sk(n, seeds.instance(n, i))?;
    let reduced = break_z2_symmetry(&full)?;
    let partition = random_partition(n - 1, k, seeds.partition(n, k, i))?;
    Ok(SkInstance { n, reduced, partition })
}

/// Keeps `base` when it can handle the partition, otherwise falls back to the
/// closed form at depth one.
pub fn resolve_engine(base: Engine, partition: &Partition, p: usize) -> Engine {
    if base.check(partition, p).is_err() && p == 1 {
        Engine::AnalyticP1
    } else {
        base
    }
}

/// SK energy density `E / n^{3/2}`.
pub fn density(energy: f64, n: usize) -> f64 {
    energy / (n as f64).powf(1.5)
}

/// Sample mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / m;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_distinct() {
        let s = Seeds::new(7);
        assert_ne!(s.instance(16, 0), s.instance(16, 1));
        assert_ne!(s.instance(16, 0), s.graph(16, 0));
        assert_ne!(s.partition(16, 2, 0), s.partition(16, 4, 0));
    }

    #[test]
    fn mean_and_error() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 12.0).sqrt() / 1.0).abs() < 1e-12);
    }

    #[test]
    fn instance_shapes() {
        let inst = sk_instance(&Seeds::new(1), 9, 2, 0).unwrap();
        assert_eq!(inst.reduced.problem.n(), 8);
        assert_eq!(inst.partition.k(), 2);
    }
}
