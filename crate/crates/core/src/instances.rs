//! Problem generators and file formats.
//!
//! Problem files are JSON documents
//! `{"n": .., "basis": "spin"|"occupation", "h": [..], "edges": [[i, j, w], ..]}`
//! and graph files are `{"n": .., "weights": [..], "edges": [[i, j], ..]}`, where a
//! graph may alternatively carry a dense `"adjacency"` matrix of 0/1 entries.
//! All indices are 0-based.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{chop_balanced, Basis, IsingProblem, Partition, SymMatrix};
use crate::seed::RngSeed;

/// Vertex-weighted simple graph for the weighted maximum clique problem.
#[derive(Debug, Clone, PartialEq)]
pub struct CliqueGraph {
    weights: Vec<f64>,
    adjacency: Vec<bool>,
}

impl CliqueGraph {
    pub fn new(weights: Vec<f64>, edges: &[(usize, usize)]) -> Result<Self> {
        let n = weights.len();
        validate_weights(&weights)?;
        let mut adjacency = vec![false; n * n];
        for &(i, j) in edges {
            if i >= n || j >= n {
                return invalid(format!("edge ({i},{j}) out of range for n={n}"));
            }
            if i == j {
                return invalid(format!("self-loop on vertex {i}"));
            }
            adjacency[i * n + j] = true;
            adjacency[j * n + i] = true;
        }
        Ok(Self { weights, adjacency })
    }

    pub fn from_adjacency(weights: Vec<f64>, rows: &[Vec<bool>]) -> Result<Self> {
        let n = weights.len();
        validate_weights(&weights)?;
        if rows.len() != n {
            return invalid(format!("adjacency has {} rows, expected {n}", rows.len()));
        }
        let mut adjacency = vec![false; n * n];
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n {
                return invalid(format!("adjacency[{i}] has length {}, expected {n}", r.len()));
            }
            if r[i] {
                return invalid(format!("adjacency[{i}][{i}] set: graph must be irreflexive"));
            }
            for (j, &a) in r.iter().enumerate() {
                if a != rows[j][i] {
                    return invalid(format!("adjacency[{i}][{j}] != adjacency[{j}][{i}]"));
                }
                adjacency[i * n + j] = a;
            }
        }
        Ok(Self { weights, adjacency })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.weights.len()
    }

    #[inline]
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.n() + j]
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.n();
        (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).filter(|&(i, j)| self.adjacent(i, j)).collect()
    }

    pub fn max_weight(&self) -> f64 {
        self.weights.iter().copied().fold(0.0, f64::max)
    }

    /// True when the selected vertices are pairwise adjacent.
    pub fn is_clique(&self, selected: &[bool]) -> bool {
        let members: Vec<usize> = (0..self.n()).filter(|&i| selected[i]).collect();
        members.iter().enumerate().all(|(a, &i)| members[a + 1..].iter().all(|&j| self.adjacent(i, j)))
    }

    pub fn weight_of(&self, selected: &[bool]) -> f64 {
        self.weights.iter().zip(selected).filter(|(_, &s)| s).map(|(w, _)| w).sum()
    }
}

fn validate_weights(weights: &[f64]) -> Result<()> {
    if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
        return invalid(format!("weights[{i}] = {} must be finite and non-negative", weights[i]));
    }
    Ok(())
}

/// Sherrington-Kirkpatrick instance: standard-normal couplings, zero fields.
pub fn generate_sk(n: usize, seed: RngSeed) -> Result<IsingProblem> {
    if n < 2 {
        return invalid(format!("SK instance needs n >= 2, got {n}"));
    }
    let mut rng = seed.rng();
    let mut w = SymMatrix::zeros(n);
    for i in 0..n {
        for j in (i + 1)..n {
            w.set(i, j, rng.sample(StandardNormal));
        }
    }
    IsingProblem::new(vec![0.0; n], w, Basis::Spin)
}

/// Result of pinning one spin of a zero-field problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedProblem {
    pub problem: IsingProblem,
    pub fixed_index: usize,
    pub fixed_value: f64,
}

impl ReducedProblem {
    /// Re-inserts the pinned spin into an assignment of the reduced problem.
    pub fn lift(&self, bits: &[bool]) -> Vec<bool> {
        let mut out = bits.to_vec();
        out.insert(self.fixed_index, self.fixed_value < 0.0);
        out
    }
}

/// Removes the global spin-flip symmetry by pinning the last spin to `+1`.
///
/// The reduced problem has fields `h'_i = W_{i,n-1}` and the remaining
/// couplings; its spectrum is the original spectrum on the `Z_{n-1} = +1` half.
pub fn break_z2_symmetry(problem: &IsingProblem) -> Result<ReducedProblem> {
    if problem.basis() != Basis::Spin {
        return Err(Error::Precondition("symmetry breaking needs a spin-basis problem".into()));
    }
    if problem.h().iter().any(|&x| x != 0.0) {
        return Err(Error::Precondition("symmetry breaking needs h = 0".into()));
    }
    let n = problem.n();
    if n < 2 {
        return Err(Error::Precondition("symmetry breaking needs n >= 2".into()));
    }
    let last = n - 1;
    let keep: Vec<usize> = (0..last).collect();
    let h = keep.iter().map(|&i| problem.w().get(i, last)).collect();
    let reduced = IsingProblem::new(h, problem.w().restrict(&keep), Basis::Spin)?;
    Ok(ReducedProblem { problem: reduced, fixed_index: last, fixed_value: 1.0 })
}

/// Occupation-basis penalty Hamiltonian for the weighted maximum clique:
/// fields `-w_i`, and coupling `lambda` on every non-adjacent pair.
pub fn build_clique_problem(graph: &CliqueGraph, lambda: f64) -> Result<IsingProblem> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return invalid(format!("penalty strength must be finite and >= 0, got {lambda}"));
    }
    validate_weights(graph.weights())?;
    let n = graph.n();
    let mut w = SymMatrix::zeros(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if !graph.adjacent(i, j) {
                w.set(i, j, lambda);
            }
        }
    }
    IsingProblem::new(graph.weights().iter().map(|x| -x).collect(), w, Basis::Occupation)
}

/// Erdos-Renyi graph with uniform vertex weights in `[w_min, w_max)`.
pub fn random_graph(n: usize, edge_prob: f64, w_min: f64, w_max: f64, seed: RngSeed) -> Result<CliqueGraph> {
    if !(0.0..=1.0).contains(&edge_prob) || !(0.0 <= w_min && w_min < w_max) {
        return invalid("random graph needs edge_prob in [0,1] and 0 <= w_min < w_max");
    }
    let mut rng = seed.rng();
    let weights = (0..n).map(|_| rng.random_range(w_min..w_max)).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < edge_prob {
                edges.push((i, j));
            }
        }
    }
    CliqueGraph::new(weights, &edges)
}

/// Uniformly shuffled indices chopped into `k` balanced groups.
pub fn random_partition(n: usize, k: usize, seed: RngSeed) -> Result<Partition> {
    if k == 0 || k > n {
        return invalid(format!("need 1 <= k <= n, got k={k}, n={n}"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed.rng());
    Partition::new(n, chop_balanced(&order, k))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemFile {
    n: usize,
    basis: Basis,
    h: Vec<f64>,
    edges: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    n: usize,
    weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    edges: Option<Vec<(usize, usize)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    adjacency: Option<Vec<Vec<u8>>>,
}

fn parse_err(source: &str, message: impl Into<String>) -> Error {
    Error::Parse { source_name: source.to_string(), message: message.into() }
}

pub fn problem_to_json(problem: &IsingProblem) -> String {
    let file = ProblemFile { n: problem.n(), basis: problem.basis(), h: problem.h().to_vec(), edges: problem.edges() };
    serde_json::to_string_pretty(&file).expect("problem serialization is infallible")
}

pub fn problem_from_json(text: &str, source: &str) -> Result<IsingProblem> {
    let f: ProblemFile = serde_json::from_str(text).map_err(|e| parse_err(source, e.to_string()))?;
    if f.h.len() != f.n {
        return Err(parse_err(source, format!("field `h` has length {}, but n = {}", f.h.len(), f.n)));
    }
    for (k, &(i, j, _)) in f.edges.iter().enumerate() {
        if i >= f.n || j >= f.n || i == j {
            return Err(parse_err(source, format!("edges[{k}] = ({i}, {j}) is not a valid pair for n = {}", f.n)));
        }
    }
    IsingProblem::from_edges(f.h, &f.edges, f.basis).map_err(|e| parse_err(source, e.to_string()))
}

pub fn graph_to_json(graph: &CliqueGraph) -> String {
    let file = GraphFile { n: graph.n(), weights: graph.weights().to_vec(), edges: Some(graph.edges()), adjacency: None };
    serde_json::to_string_pretty(&file).expect("graph serialization is infallible")
}

pub fn graph_from_json(text: &str, source: &str) -> Result<CliqueGraph> {
    let f: GraphFile = serde_json::from_str(text).map_err(|e| parse_err(source, e.to_string()))?;
    if f.weights.len() != f.n {
        return Err(parse_err(source, format!("field `weights` has length {}, but n = {}", f.weights.len(), f.n)));
    }
    let wrap = |e: Error| parse_err(source, e.to_string());
    match (f.edges, f.adjacency) {
        (Some(_), Some(_)) => Err(parse_err(source, "give either `edges` or `adjacency`, not both")),
        (edges, None) => CliqueGraph::new(f.weights, &edges.unwrap_or_default()).map_err(wrap),
        (None, Some(rows)) => {
            let mut bool_rows = Vec::with_capacity(rows.len());
            for (i, r) in rows.iter().enumerate() {
                let mut br = Vec::with_capacity(r.len());
                for (j, &x) in r.iter().enumerate() {
                    match x {
                        0 => br.push(false),
                        1 => br.push(true),
                        _ => return Err(parse_err(source, format!("adjacency[{i}][{j}] = {x}, expected 0 or 1"))),
                    }
                }
                bool_rows.push(br);
            }
            CliqueGraph::from_adjacency(f.weights, &bool_rows).map_err(wrap)
        }
    }
}

pub fn save_problem(problem: &IsingProblem, path: &Path) -> Result<()> {
    fs::write(path, problem_to_json(problem) + "\n")?;
    Ok(())
}

pub fn load_problem(path: &Path) -> Result<IsingProblem> {
    problem_from_json(&fs::read_to_string(path)?, &path.display().to_string())
}

pub fn save_graph(graph: &CliqueGraph, path: &Path) -> Result<()> {
    fs::write(path, graph_to_json(graph) + "\n")?;
    Ok(())
}

pub fn load_graph(path: &Path) -> Result<CliqueGraph> {
    graph_from_json(&fs::read_to_string(path)?, &path.display().to_string())
}
