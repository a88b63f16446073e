//! Self-consistent mean-field QAOA.
//!
//! A classical Ising (or occupation-basis QUBO) problem is split into
//! disjoint subproblems. Each subproblem is evolved with a shallow QAOA
//! circuit, and the couplings that cross subproblem boundaries are replaced
//! by a mean-field environment that is iterated to self-consistency.
//!
//! Module map:
//!
//! - [`model`]: problem, partition, environment types and energy bookkeeping.
//! - [`instances`]: SK ensembles, symmetry breaking, clique Hamiltonians, partitions, file IO.
//! - [`qaoa`]: state-vector engine plus closed-form depth-one expectations.
//! - [`scmf`]: the self-consistency loop, convergence diagnostics, multistart fixed-point solver.
//! - [`variational`]: Nelder-Mead over the shared angles, landscape scans, SK initialisation.
//! - [`postprocess`]: sample stitching, clique repair and local search, classical baselines.

pub mod error;
pub mod instances;
pub mod model;
pub mod postprocess;
pub mod qaoa;
pub mod scmf;
pub mod seed;
pub mod variational;

pub use error::{Error, Result};
pub use model::{Basis, Environment, ExpectationSet, IsingProblem, Partition, QaoaParams, SymMatrix};
pub use seed::RngSeed;

/// Asymptotic ground-state energy density of the SK model (Parisi constant).
pub const PARISI_CONSTANT: f64 = -0.7631;

/// Depth-one QAOA energy density of the SK model in the large-n limit, `-1/sqrt(4e)`.
pub fn sk_p1_energy_density() -> f64 {
    -1.0 / (4.0 * std::f64::consts::E).sqrt()
}
