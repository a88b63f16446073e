//! Problem, partition, and environment types, plus classical and factorized
//! energy evaluation.
//!
//! The cost function is
//!
//! ```text
//! C(v) = sum_i v_i (h_i + sum_{j>i} W_ij v_j)
//! ```
//!
//! with `v_i = 1 - 2 b_i` in the spin basis and `v_i = b_i` in the occupation
//! basis, where `b_i` is the measured bit.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    /// Variables are Pauli-Z eigenvalues, bit `b` maps to `1 - 2b`.
    Spin,
    /// Variables are occupations, bit `b` maps to `b`.
    Occupation,
}

impl Basis {
    #[inline]
    pub fn value(self, bit: bool) -> f64 {
        match (self, bit) {
            (Basis::Spin, false) => 1.0,
            (Basis::Spin, true) => -1.0,
            (Basis::Occupation, false) => 0.0,
            (Basis::Occupation, true) => 1.0,
        }
    }

    /// Closed interval that one-body expectations live in.
    pub fn range(self) -> (f64, f64) {
        match self {
            Basis::Spin => (-1.0, 1.0),
            Basis::Occupation => (0.0, 1.0),
        }
    }

    pub fn clamp(self, x: f64) -> f64 {
        let (lo, hi) = self.range();
        x.clamp(lo, hi)
    }
}

/// Dense row-major symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    /// Builds from a row-major buffer, rejecting asymmetric input.
    pub fn from_row_major(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return invalid(format!("matrix buffer has {} entries, expected {}", data.len(), n * n));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (data[i * n + j], data[j * n + i]);
                if (a - b).abs() > SYMMETRY_TOL * (1.0 + a.abs().max(b.abs())) {
                    return invalid(format!("matrix not symmetric at ({i},{j}): {a} vs {b}"));
                }
            }
        }
        Ok(Self { n, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n {
                return invalid(format!("row {i} has length {}, expected {n}", r.len()));
            }
            data.extend_from_slice(r);
        }
        Self::from_row_major(n, data)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
        self.data[j * self.n + i] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn has_zero_diagonal(&self) -> bool {
        (0..self.n).all(|i| self.get(i, i) == 0.0)
    }

    /// Principal submatrix on `idx`, in the given order.
    pub fn restrict(&self, idx: &[usize]) -> SymMatrix {
        let m = idx.len();
        let mut out = SymMatrix::zeros(m);
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                out.data[a * m + b] = self.get(i, j);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsingProblem {
    h: Vec<f64>,
    w: SymMatrix,
    basis: Basis,
}

impl IsingProblem {
    pub fn new(h: Vec<f64>, w: SymMatrix, basis: Basis) -> Result<Self> {
        if h.len() != w.dim() {
            return invalid(format!("h has length {} but W is {}x{}", h.len(), w.dim(), w.dim()));
        }
        if !w.has_zero_diagonal() {
            return invalid("coupling matrix must have a zero diagonal");
        }
        if h.iter().chain(w.data.iter()).any(|x| !x.is_finite()) {
            return invalid("non-finite coefficient");
        }
        Ok(Self { h, w, basis })
    }

    /// Builds from a list of `(i, j, w)` couplings; repeated pairs accumulate.
    pub fn from_edges(h: Vec<f64>, edges: &[(usize, usize, f64)], basis: Basis) -> Result<Self> {
        let n = h.len();
        let mut w = SymMatrix::zeros(n);
        for &(i, j, c) in edges {
            if i >= n || j >= n {
                return invalid(format!("edge ({i},{j}) out of range for n={n}"));
            }
            if i == j {
                return invalid(format!("self-coupling on variable {i}"));
            }
            let cur = w.get(i, j);
            w.set(i, j, cur + c);
        }
        Self::new(h, w, basis)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.h.len()
    }

    #[inline]
    pub fn h(&self) -> &[f64] {
        &self.h
    }

    #[inline]
    pub fn w(&self) -> &SymMatrix {
        &self.w
    }

    #[inline]
    pub fn basis(&self) -> Basis {
        self.basis
    }

    /// Nonzero couplings with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let c = self.w.get(i, j);
                if c != 0.0 {
                    out.push((i, j, c));
                }
            }
        }
        out
    }

    pub fn values(&self, bits: &[bool]) -> Vec<f64> {
        bits.iter().map(|&b| self.basis.value(b)).collect()
    }

    /// Energy of a classical assignment.
    pub fn classical_energy(&self, bits: &[bool]) -> Result<f64> {
        if bits.len() != self.n() {
            return invalid(format!("assignment has length {}, problem has n={}", bits.len(), self.n()));
        }
        Ok(self.energy_of_values(&self.values(bits)))
    }

    pub(crate) fn energy_of_values(&self, v: &[f64]) -> f64 {
        let n = self.n();
        let mut e = 0.0;
        for i in 0..n {
            if v[i] == 0.0 {
                continue;
            }
            let row = self.w.row(i);
            let mut acc = self.h[i];
            for j in (i + 1)..n {
                acc += row[j] * v[j];
            }
            e += v[i] * acc;
        }
        e
    }

    /// `h_i + sum_j W_ij v_j`; the energy change of moving `v_i` by `d` is `d` times this.
    pub fn local_field(&self, i: usize, v: &[f64]) -> f64 {
        self.h[i] + self.w.row(i).iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Rewrites the problem in the spin basis using `n = (1 - Z) / 2`.
    ///
    /// Returns the converted problem and the constant `offset` such that
    /// `E_original(b) = E_spin(b) + offset` for every bit string `b`.
    pub fn to_spin(&self) -> (IsingProblem, f64) {
        match self.basis {
            Basis::Spin => (self.clone(), 0.0),
            Basis::Occupation => {
                let (h, w, offset) = occupation_to_spin(&self.h, &self.w);
                (IsingProblem { h, w, basis: Basis::Spin }, offset)
            }
        }
    }

    /// Rewrites the problem in the occupation basis using `Z = 1 - 2n`.
    pub fn to_occupation(&self) -> (IsingProblem, f64) {
        match self.basis {
            Basis::Occupation => (self.clone(), 0.0),
            Basis::Spin => {
                let n = self.n();
                let mut offset: f64 = self.h.iter().sum();
                let mut h = vec![0.0; n];
                let mut w = SymMatrix::zeros(n);
                for i in 0..n {
                    h[i] = -2.0 * self.h[i] - 2.0 * self.w.row(i).iter().sum::<f64>();
                    for j in (i + 1)..n {
                        let c = self.w.get(i, j);
                        w.set(i, j, 4.0 * c);
                        offset += c;
                    }
                }
                (IsingProblem { h, w, basis: Basis::Occupation }, offset)
            }
        }
    }

    /// Same problem with variables relabelled so that new variable `a` is old `perm[a]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<IsingProblem> {
        let n = self.n();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return invalid("not a permutation");
        }
        let h = perm.iter().map(|&p| self.h[p]).collect();
        Ok(IsingProblem { h, w: self.w.restrict(perm), basis: self.basis })
    }
}

/// Occupation coefficients `(a, W)` to spin coefficients plus offset.
pub(crate) fn occupation_to_spin(a: &[f64], w: &SymMatrix) -> (Vec<f64>, SymMatrix, f64) {
    let n = a.len();
    let mut h = vec![0.0; n];
    let mut ws = SymMatrix::zeros(n);
    let mut offset = 0.0;
    for i in 0..n {
        offset += 0.5 * a[i];
        h[i] = -0.5 * a[i] - 0.25 * w.row(i).iter().sum::<f64>();
        for j in (i + 1)..n {
            let c = w.get(i, j);
            ws.set(i, j, 0.25 * c);
            offset += 0.25 * c;
        }
    }
    (h, ws, offset)
}

/// Disjoint, balanced cover of `0..n` by `K` groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    n: usize,
    groups: Vec<Vec<usize>>,
    group_of: Vec<usize>,
}

impl Partition {
    pub fn new(n: usize, groups: Vec<Vec<usize>>) -> Result<Self> {
        let k = groups.len();
        if k == 0 || k > n.max(1) {
            return invalid(format!("need 1 <= K <= n, got K={k}, n={n}"));
        }
        let mut group_of = vec![usize::MAX; n];
        for (g, members) in groups.iter().enumerate() {
            for &i in members {
                if i >= n {
                    return invalid(format!("index {i} out of range for n={n}"));
                }
                if group_of[i] != usize::MAX {
                    return invalid(format!("index {i} appears in more than one group"));
                }
                group_of[i] = g;
            }
        }
        if let Some(i) = group_of.iter().position(|&g| g == usize::MAX) {
            return invalid(format!("index {i} is not covered by any group"));
        }
        let (lo, hi) = (n / k, n.div_ceil(k));
        if let Some(g) = groups.iter().position(|s| s.len() < lo || s.len() > hi) {
            return invalid(format!("group {g} has size {}, expected {lo} or {hi}", groups[g].len()));
        }
        Ok(Self { n, groups, group_of })
    }

    /// The trivial partition with one group.
    pub fn single(n: usize) -> Self {
        Self { n, groups: vec![(0..n).collect()], group_of: vec![0; n] }
    }

    /// Contiguous blocks `[0..s), [s..2s), ...` with balanced sizes.
    pub fn contiguous(n: usize, k: usize) -> Result<Self> {
        if k == 0 || k > n {
            return invalid(format!("need 1 <= K <= n, got K={k}, n={n}"));
        }
        let order: Vec<usize> = (0..n).collect();
        Self::new(n, chop_balanced(&order, k))
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.groups.len()
    }

    #[inline]
    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    #[inline]
    pub fn group(&self, k: usize) -> &[usize] {
        &self.groups[k]
    }

    #[inline]
    pub fn group_of(&self, i: usize) -> usize {
        self.group_of[i]
    }

    pub fn max_group_size(&self) -> usize {
        self.groups.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Splits `order` into `k` consecutive blocks, the first `len % k` one longer.
pub(crate) fn chop_balanced(order: &[usize], k: usize) -> Vec<Vec<usize>> {
    let n = order.len();
    let (base, extra) = (n / k, n % k);
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for g in 0..k {
        let len = base + usize::from(g < extra);
        let mut block = order[start..start + len].to_vec();
        block.sort_unstable();
        out.push(block);
        start += len;
    }
    out
}

/// Mean-field record of per-variable expectations.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    values: Vec<f64>,
    basis: Basis,
}

impl Environment {
    pub fn zeros(n: usize, basis: Basis) -> Self {
        Self { values: vec![0.0; n], basis }
    }

    pub fn filled(n: usize, value: f64, basis: Basis) -> Result<Self> {
        Self::from_values(vec![value; n], basis)
    }

    pub fn from_values(values: Vec<f64>, basis: Basis) -> Result<Self> {
        let (lo, hi) = basis.range();
        if let Some(i) = values.iter().position(|x| !(lo..=hi).contains(x)) {
            return invalid(format!("environment entry {i} = {} outside [{lo}, {hi}]", values[i]));
        }
        Ok(Self { values, basis })
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn basis(&self) -> Basis {
        self.basis
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Overwrites entries, clamping into the basis range.
    pub fn assign(&mut self, indices: &[usize], new_values: &[f64]) {
        for (&i, &v) in indices.iter().zip(new_values) {
            self.values[i] = self.basis.clamp(v);
        }
    }

    pub fn mean_abs(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().map(|x| x.abs()).sum::<f64>() / self.values.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaoaParams {
    gammas: Vec<f64>,
    betas: Vec<f64>,
}

impl QaoaParams {
    pub fn new(gammas: Vec<f64>, betas: Vec<f64>) -> Result<Self> {
        if gammas.is_empty() || gammas.len() != betas.len() {
            return invalid(format!(
                "need p >= 1 and matching angle counts, got {} gammas and {} betas",
                gammas.len(),
                betas.len()
            ));
        }
        Ok(Self { gammas, betas })
    }

    pub fn p1(gamma: f64, beta: f64) -> Self {
        Self { gammas: vec![gamma], betas: vec![beta] }
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.gammas.len()
    }

    #[inline]
    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    #[inline]
    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// `[gamma_1..gamma_p, beta_1..beta_p]`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.gammas.iter().chain(&self.betas).copied().collect()
    }

    pub fn from_flat(x: &[f64]) -> Result<Self> {
        if x.is_empty() || x.len() % 2 != 0 {
            return invalid(format!("flat angle vector must have even length >= 2, got {}", x.len()));
        }
        let p = x.len() / 2;
        Self::new(x[..p].to_vec(), x[p..].to_vec())
    }

    /// Appends a layer with zero angles, which leaves the state unchanged.
    pub fn with_identity_layer(&self) -> Self {
        let mut out = self.clone();
        out.gammas.push(0.0);
        out.betas.push(0.0);
        out
    }
}

/// One- and two-body diagonal expectations over one subproblem.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectationSet {
    indices: Vec<usize>,
    one_body: Vec<f64>,
    two_body: SymMatrix,
    basis: Basis,
}

impl ExpectationSet {
    pub fn new(indices: Vec<usize>, one_body: Vec<f64>, two_body: SymMatrix, basis: Basis) -> Result<Self> {
        let m = indices.len();
        if one_body.len() != m || two_body.dim() != m {
            return invalid("expectation set dimensions do not match its index list");
        }
        let tol = 1e-9;
        let (lo, hi) = basis.range();
        for (i, &x) in one_body.iter().enumerate() {
            if x < lo - tol || x > hi + tol {
                return invalid(format!("one-body expectation {i} = {x} outside [{lo}, {hi}]"));
            }
            let expected_diag = match basis {
                Basis::Spin => 1.0,
                Basis::Occupation => x,
            };
            if (two_body.get(i, i) - expected_diag).abs() > tol {
                return invalid(format!("two-body diagonal {i} inconsistent with basis"));
            }
        }
        Ok(Self { indices, one_body, two_body, basis })
    }

    /// Product-state expectations implied by an environment restricted to `indices`.
    pub fn from_environment(env: &Environment, indices: &[usize]) -> Self {
        let m = indices.len();
        let one: Vec<f64> = indices.iter().map(|&i| env.values()[i]).collect();
        let mut two = SymMatrix::zeros(m);
        for a in 0..m {
            for b in a..m {
                let v = if a == b {
                    match env.basis() {
                        Basis::Spin => 1.0,
                        Basis::Occupation => one[a],
                    }
                } else {
                    one[a] * one[b]
                };
                two.set(a, b, v);
            }
        }
        Self { indices: indices.to_vec(), one_body: one, two_body: two, basis: env.basis() }
    }

    #[inline]
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    #[inline]
    pub fn one_body(&self) -> &[f64] {
        &self.one_body
    }

    #[inline]
    pub fn two_body(&self) -> &SymMatrix {
        &self.two_body
    }

    #[inline]
    pub fn basis(&self) -> Basis {
        self.basis
    }
}

/// Environment-dressed linear coefficients for group `k`, in group order.
pub fn effective_fields(problem: &IsingProblem, partition: &Partition, env: &Environment, k: usize) -> Result<Vec<f64>> {
    if env.basis() != problem.basis() {
        return invalid(format!("environment basis {:?} does not match problem basis {:?}", env.basis(), problem.basis()));
    }
    check_shapes(problem, partition)?;
    if env.len() != problem.n() {
        return invalid(format!("environment has length {}, problem has n={}", env.len(), problem.n()));
    }
    if k >= partition.k() {
        return invalid(format!("subproblem index {k} out of range (K={})", partition.k()));
    }
    let e = env.values();
    Ok(partition
        .group(k)
        .iter()
        .map(|&i| {
            let row = problem.w().row(i);
            let dressing: f64 = (0..problem.n())
                .filter(|&j| partition.group_of(j) != k)
                .map(|j| row[j] * e[j])
                .sum();
            problem.h()[i] + dressing
        })
        .collect())
}

fn check_shapes(problem: &IsingProblem, partition: &Partition) -> Result<()> {
    if partition.n() != problem.n() {
        return invalid(format!("partition covers n={}, problem has n={}", partition.n(), problem.n()));
    }
    Ok(())
}

/// Energy split by provenance: linear fields, couplings inside a group,
/// and couplings between groups (mean-field products).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyTerms {
    pub field: f64,
    pub intra: f64,
    pub inter: f64,
}

impl EnergyTerms {
    pub fn total(&self) -> f64 {
        self.field + self.intra + self.inter
    }
}

pub fn energy_terms(problem: &IsingProblem, partition: &Partition, expectations: &[ExpectationSet]) -> Result<EnergyTerms> {
    check_shapes(problem, partition)?;
    let n = problem.n();
    // (set, local position) for every global variable
    let mut slot = vec![(usize::MAX, 0usize); n];
    for (s, set) in expectations.iter().enumerate() {
        if set.basis() != problem.basis() {
            return invalid(format!("expectation set {s} basis does not match problem basis"));
        }
        let mut group = None;
        for (a, &i) in set.indices().iter().enumerate() {
            if i >= n {
                return invalid(format!("expectation set {s} references index {i} >= n={n}"));
            }
            if slot[i].0 != usize::MAX {
                return invalid(format!("variable {i} covered by more than one expectation set"));
            }
            slot[i] = (s, a);
            let g = partition.group_of(i);
            if *group.get_or_insert(g) != g {
                return invalid(format!("expectation set {s} spans more than one partition group"));
            }
        }
    }
    if let Some(i) = slot.iter().position(|&(s, _)| s == usize::MAX) {
        return invalid(format!("variable {i} not covered by any expectation set"));
    }
    let one = |i: usize| {
        let (s, a) = slot[i];
        expectations[s].one_body()[a]
    };
    let mut terms = EnergyTerms { field: 0.0, intra: 0.0, inter: 0.0 };
    for i in 0..n {
        terms.field += problem.h()[i] * one(i);
        let row = problem.w().row(i);
        for j in (i + 1)..n {
            let c = row[j];
            if c == 0.0 {
                continue;
            }
            let ((si, ai), (sj, aj)) = (slot[i], slot[j]);
            if si == sj {
                terms.intra += c * expectations[si].two_body().get(ai, aj);
            } else {
                terms.inter += c * one(i) * one(j);
            }
        }
    }
    Ok(terms)
}

/// Full-problem energy of the factorized product state under the mean-field substitution.
pub fn factorized_energy(problem: &IsingProblem, partition: &Partition, expectations: &[ExpectationSet]) -> Result<f64> {
    Ok(energy_terms(problem, partition, expectations)?.total())
}

/// Share of the factorized energy carried by fields and intra-group couplings.
pub fn intra_energy_fraction(problem: &IsingProblem, partition: &Partition, expectations: &[ExpectationSet]) -> Result<f64> {
    let t = energy_terms(problem, partition, expectations)?;
    let total = t.total();
    let scale = t.field.abs() + t.intra.abs() + t.inter.abs();
    if total.abs() <= 1e-12 * scale.max(1.0) {
        return Err(Error::DegenerateTotal(total));
    }
    Ok((t.field + t.intra) / total)
}
