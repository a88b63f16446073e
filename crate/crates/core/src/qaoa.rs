//! QAOA evaluation for a single subproblem.
//!
//! Qubit `a` of a subproblem state is local variable `a`, stored as bit `a`
//! of the basis-state index. A layer applies the diagonal cost phase
//! `exp(-i gamma C)` followed by the mixer `exp(+i beta X)` on every qubit.
//! With this orientation a lone spin with field `h` ends at
//! `<Z> = -sin(2 beta) sin(2 gamma h)`, so minimising angles sit at positive
//! `(gamma, beta)`.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{effective_fields, occupation_to_spin, Basis, Environment, ExpectationSet, IsingProblem, Partition, QaoaParams, SymMatrix};
use crate::seed::RngSeed;

pub const DEFAULT_MAX_QUBITS: usize = 24;

const NORM_TOL: f64 = 1e-9;

/// Local Hamiltonian of one subproblem: dressed fields and intra-group couplings.
#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemSpec {
    indices: Vec<usize>,
    local_h: Vec<f64>,
    local_w: SymMatrix,
    basis: Basis,
}

impl SubproblemSpec {
    pub fn new(indices: Vec<usize>, local_h: Vec<f64>, local_w: SymMatrix, basis: Basis) -> Result<Self> {
        if local_h.len() != indices.len() || local_w.dim() != indices.len() {
            return invalid("subproblem spec dimensions disagree");
        }
        if !local_w.has_zero_diagonal() {
            return invalid("subproblem couplings must have a zero diagonal");
        }
        Ok(Self { indices, local_h, local_w, basis })
    }

    /// Spec for group `k` of `problem`, with fields dressed by `env`.
    pub fn from_problem(problem: &IsingProblem, partition: &Partition, env: &Environment, k: usize) -> Result<Self> {
        let local_h = effective_fields(problem, partition, env, k)?;
        let indices = partition.group(k).to_vec();
        let local_w = problem.w().restrict(&indices);
        Ok(Self { indices, local_h, local_w, basis: problem.basis() })
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.indices.len()
    }

    #[inline]
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    #[inline]
    pub fn local_h(&self) -> &[f64] {
        &self.local_h
    }

    #[inline]
    pub fn local_w(&self) -> &SymMatrix {
        &self.local_w
    }

    #[inline]
    pub fn basis(&self) -> Basis {
        self.basis
    }

    /// Spin-basis fields, couplings and constant offset of the local Hamiltonian.
    pub fn spin_form(&self) -> (Vec<f64>, SymMatrix, f64) {
        match self.basis {
            Basis::Spin => (self.local_h.clone(), self.local_w.clone(), 0.0),
            Basis::Occupation => occupation_to_spin(&self.local_h, &self.local_w),
        }
    }

    /// `<phi| C_n |phi>` for a set of expectations over this spec, in its own basis.
    pub fn energy(&self, ex: &ExpectationSet) -> f64 {
        let m = self.size();
        let mut e = 0.0;
        for a in 0..m {
            e += self.local_h[a] * ex.one_body()[a];
            for b in (a + 1)..m {
                e += self.local_w.get(a, b) * ex.two_body().get(a, b);
            }
        }
        e
    }
}

/// Amplitudes of a subproblem register.
#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemState {
    num_qubits: usize,
    amplitudes: Vec<Complex64>,
}

impl SubproblemState {
    /// `|+>^m`.
    pub fn uniform(num_qubits: usize) -> Self {
        let dim = 1usize << num_qubits;
        let a = Complex64::new(1.0 / (dim as f64).sqrt(), 0.0);
        Self { num_qubits, amplitudes: vec![a; dim] }
    }

    pub fn basis_state(num_qubits: usize, index: usize) -> Self {
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); 1 << num_qubits];
        amplitudes[index] = Complex64::new(1.0, 0.0);
        Self { num_qubits, amplitudes }
    }

    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self> {
        let dim = amplitudes.len();
        if dim == 0 || !dim.is_power_of_two() {
            return invalid(format!("amplitude count {dim} is not a power of two"));
        }
        let state = Self { num_qubits: dim.trailing_zeros() as usize, amplitudes };
        let norm = state.norm_sqr();
        if (norm - 1.0).abs() > NORM_TOL {
            return invalid(format!("state is not normalised: |psi|^2 = {norm}"));
        }
        Ok(state)
    }

    #[inline]
    pub fn num_qubits(&self) -> usize {
        self.num_qubits
    }

    #[inline]
    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    fn apply_phase(&mut self, table: &[f64], gamma: f64) {
        for (a, &c) in self.amplitudes.iter_mut().zip(table) {
            *a *= Complex64::from_polar(1.0, -gamma * c);
        }
    }

    /// `exp(+i beta X)` on every qubit.
    fn apply_mixer(&mut self, beta: f64) {
        let (s, c) = beta.sin_cos();
        let is = Complex64::new(0.0, s);
        let dim = self.amplitudes.len();
        for q in 0..self.num_qubits {
            let stride = 1usize << q;
            for block in (0..dim).step_by(stride << 1) {
                for x in block..block + stride {
                    let a0 = self.amplitudes[x];
                    let a1 = self.amplitudes[x + stride];
                    self.amplitudes[x] = a0 * c + a1 * is;
                    self.amplitudes[x + stride] = a0 * is + a1 * c;
                }
            }
        }
    }
}

/// Diagonal of the spin-form cost `sum_a h_a z_a + sum_{a<b} W_ab z_a z_b` over all basis states.
pub fn cost_table(h: &[f64], w: &SymMatrix) -> Vec<f64> {
    let m = h.len();
    let dim = 1usize << m;
    let mut table = vec![0.0; dim];
    let mut c0: f64 = h.iter().sum();
    for a in 0..m {
        c0 += w.row(a)[a + 1..].iter().sum::<f64>();
    }
    table[0] = c0;
    for x in 1..dim {
        let t = (usize::BITS - 1 - x.leading_zeros()) as usize;
        let y = x ^ (1 << t);
        let row = w.row(t);
        // bits above t are clear in y, so those spins are +1
        let mut field = h[t] + row[t + 1..].iter().sum::<f64>();
        for (j, &c) in row[..t].iter().enumerate() {
            field += if (y >> j) & 1 == 0 { c } else { -c };
        }
        table[x] = table[y] - 2.0 * field;
    }
    table
}

/// Runs the depth-p circuit from `|+>^m`.
pub fn run_qaoa(spec: &SubproblemSpec, params: &QaoaParams, max_qubits: usize) -> Result<SubproblemState> {
    let m = spec.size();
    if m > max_qubits {
        return Err(Error::ResourceLimit(format!("subproblem has {m} qubits, cap is {max_qubits}")));
    }
    let (h, w, _) = spec.spin_form();
    let table = cost_table(&h, &w);
    let mut state = SubproblemState::uniform(m);
    for (&g, &b) in params.gammas().iter().zip(params.betas()) {
        state.apply_phase(&table, g);
        state.apply_mixer(b);
    }
    debug_assert!((state.norm_sqr() - 1.0).abs() < NORM_TOL);
    Ok(state)
}

/// In-place Walsh-Hadamard transform: `out[S] = sum_x f(x) (-1)^{|x & S|}`.
fn walsh_hadamard(f: &mut [f64]) {
    let dim = f.len();
    let mut stride = 1;
    while stride < dim {
        for block in (0..dim).step_by(stride << 1) {
            for x in block..block + stride {
                let (a, b) = (f[x], f[x + stride]);
                f[x] = a + b;
                f[x + stride] = a - b;
            }
        }
        stride <<= 1;
    }
}

/// One- and two-body expectations of `state` in the spec's basis.
pub fn expectations(state: &SubproblemState, spec: &SubproblemSpec) -> ExpectationSet {
    let m = state.num_qubits();
    assert_eq!(m, spec.size(), "state and spec sizes disagree");
    debug_assert!((state.norm_sqr() - 1.0).abs() < NORM_TOL);
    // parity expectations <prod_{a in S} Z_a> for every subset S
    let mut parity = state.probabilities();
    walsh_hadamard(&mut parity);
    let z: Vec<f64> = (0..m).map(|a| parity[1 << a]).collect();
    let mut zz = SymMatrix::zeros(m);
    for a in 0..m {
        zz.set(a, a, 1.0);
        for b in (a + 1)..m {
            zz.set(a, b, parity[(1 << a) | (1 << b)]);
        }
    }
    spin_to_basis(spec, z, zz)
}

fn spin_to_basis(spec: &SubproblemSpec, z: Vec<f64>, zz: SymMatrix) -> ExpectationSet {
    let m = z.len();
    let (one, two) = match spec.basis() {
        Basis::Spin => (z.iter().map(|x| x.clamp(-1.0, 1.0)).collect(), zz),
        Basis::Occupation => {
            let one: Vec<f64> = z.iter().map(|x| ((1.0 - x) * 0.5).clamp(0.0, 1.0)).collect();
            let mut two = SymMatrix::zeros(m);
            for a in 0..m {
                two.set(a, a, one[a]);
                for b in (a + 1)..m {
                    two.set(a, b, 0.25 * (1.0 - z[a] - z[b] + zz.get(a, b)));
                }
            }
            (one, two)
        }
    };
    ExpectationSet::new(spec.indices().to_vec(), one, two, spec.basis()).expect("engine expectations are in range")
}

/// `shots` i.i.d. measurements in the computational basis; bit `a` of each
/// string is local variable `a`.
pub fn sample(state: &SubproblemState, shots: usize, seed: RngSeed) -> Vec<Vec<bool>> {
    let m = state.num_qubits();
    let mut cdf = Vec::with_capacity(state.amplitudes().len());
    let mut acc = 0.0;
    for a in state.amplitudes() {
        acc += a.norm_sqr();
        cdf.push(acc);
    }
    let total = acc;
    let mut rng = seed.rng();
    (0..shots)
        .map(|_| {
            let u = rng.random::<f64>() * total;
            let x = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            (0..m).map(|a| (x >> a) & 1 == 1).collect()
        })
        .collect()
}

/// Closed-form depth-one `<Z_a>` for a spin-basis spec:
/// `-sin(2 beta) sin(2 gamma h_a) prod_{b != a} cos(2 gamma W_ab)`.
pub fn analytic_one_body_p1(spec: &SubproblemSpec, gamma: f64, beta: f64) -> Result<Vec<f64>> {
    if spec.basis() != Basis::Spin {
        return Err(Error::Precondition("closed-form expectations need a spin-basis spec; convert first".into()));
    }
    Ok(one_body_p1(spec.local_h(), spec.local_w(), gamma, beta))
}

fn one_body_p1(h: &[f64], w: &SymMatrix, gamma: f64, beta: f64) -> Vec<f64> {
    let m = h.len();
    let s2b = (2.0 * beta).sin();
    (0..m)
        .map(|a| {
            let row = w.row(a);
            let prod: f64 = (0..m).filter(|&b| b != a).map(|b| (2.0 * gamma * row[b]).cos()).product();
            -s2b * (2.0 * gamma * h[a]).sin() * prod
        })
        .collect()
}

/// Closed-form depth-one `<Z_a Z_b>` in the spin basis.
///
/// With `c = cos 2 beta`, `s = sin 2 beta` and products over the other spins `k`:
///
/// ```text
/// <Z_a Z_b> = -c s sin(2g W_ab) [cos(2g h_b) P_b + cos(2g h_a) P_a]
///             + s^2/2 [cos(2g(h_a - h_b)) D - cos(2g(h_a + h_b)) S]
/// P_a = prod_k cos(2g W_ak),  D = prod_k cos(2g(W_ak - W_bk)),  S = prod_k cos(2g(W_ak + W_bk))
/// ```
fn two_body_p1(h: &[f64], w: &SymMatrix, gamma: f64, beta: f64) -> SymMatrix {
    let m = h.len();
    let g2 = 2.0 * gamma;
    let (s, c) = (2.0 * beta).sin_cos();
    let cos_w: Vec<Vec<f64>> = (0..m).map(|a| (0..m).map(|b| (g2 * w.get(a, b)).cos()).collect()).collect();
    let mut out = SymMatrix::zeros(m);
    for a in 0..m {
        out.set(a, a, 1.0);
        for b in (a + 1)..m {
            let (mut pa, mut pb, mut d, mut sm) = (1.0, 1.0, 1.0, 1.0);
            for k in 0..m {
                if k == a || k == b {
                    continue;
                }
                let (wa, wb) = (w.get(a, k), w.get(b, k));
                pa *= cos_w[a][k];
                pb *= cos_w[b][k];
                d *= (g2 * (wa - wb)).cos();
                sm *= (g2 * (wa + wb)).cos();
            }
            let mixed = -c * s * (g2 * w.get(a, b)).sin() * ((g2 * h[b]).cos() * pb + (g2 * h[a]).cos() * pa);
            let yy = 0.5 * s * s * ((g2 * (h[a] - h[b])).cos() * d - (g2 * (h[a] + h[b])).cos() * sm);
            out.set(a, b, mixed + yy);
        }
    }
    out
}

/// Depth-one expectations from the closed forms, in the spec's basis.
pub fn analytic_expectations_p1(spec: &SubproblemSpec, gamma: f64, beta: f64) -> ExpectationSet {
    let (h, w, _) = spec.spin_form();
    let z = one_body_p1(&h, &w, gamma, beta);
    let zz = two_body_p1(&h, &w, gamma, beta);
    spin_to_basis(spec, z, zz)
}

/// How subproblem expectations are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    /// Exact state-vector simulation at any depth, capped in qubit count.
    StateVector { max_qubits: usize },
    /// Closed-form depth-one expectations; no qubit cap.
    AnalyticP1,
}

impl Default for Engine {
    fn default() -> Self {
        Engine::StateVector { max_qubits: DEFAULT_MAX_QUBITS }
    }
}

impl Engine {
    pub fn evaluate(&self, spec: &SubproblemSpec, params: &QaoaParams) -> Result<ExpectationSet> {
        match *self {
            Engine::StateVector { max_qubits } => {
                let state = run_qaoa(spec, params, max_qubits)?;
                Ok(expectations(&state, spec))
            }
            Engine::AnalyticP1 => {
                if params.p() != 1 {
                    return Err(Error::Precondition(format!("closed-form engine needs p = 1, got p = {}", params.p())));
                }
                Ok(analytic_expectations_p1(spec, params.gammas()[0], params.betas()[0]))
            }
        }
    }

    /// Checks that every group of `partition` can be evaluated at depth `p`.
    pub fn check(&self, partition: &Partition, p: usize) -> Result<()> {
        match *self {
            Engine::StateVector { max_qubits } if partition.max_group_size() > max_qubits => Err(Error::ResourceLimit(format!(
                "largest subproblem has {} qubits, cap is {max_qubits}",
                partition.max_group_size()
            ))),
            Engine::AnalyticP1 if p != 1 => Err(Error::Precondition(format!("closed-form engine needs p = 1, got p = {p}"))),
            _ => Ok(()),
        }
    }

    /// State vector when every group fits under the default cap, closed form otherwise.
    pub fn auto(partition: &Partition, p: usize) -> Self {
        if p == 1 && partition.max_group_size() > 16 {
            Engine::AnalyticP1
        } else {
            Engine::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_spec(m: usize, basis: Basis, seed: u64) -> SubproblemSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = (0..m).map(|_| rng.random_range(-1.5..1.5)).collect();
        let mut w = SymMatrix::zeros(m);
        for a in 0..m {
            for b in (a + 1)..m {
                w.set(a, b, rng.random_range(-1.0..1.0));
            }
        }
        SubproblemSpec::new((0..m).collect(), h, w, basis).unwrap()
    }

    #[test]
    fn identity_circuit_keeps_uniform_state() {
        let spec = random_spec(4, Basis::Spin, 1);
        let st = run_qaoa(&spec, &QaoaParams::p1(0.0, 0.0), 24).unwrap();
        let ex = expectations(&st, &spec);
        assert!(ex.one_body().iter().all(|x| x.abs() < 1e-14));
        for a in 0..4 {
            for b in (a + 1)..4 {
                assert!(ex.two_body().get(a, b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn single_qubit_closed_form() {
        let spec = SubproblemSpec::new(vec![0], vec![1.0], SymMatrix::zeros(1), Basis::Spin).unwrap();
        for &(g, b) in &[(0.3, 0.2), (-0.7, 1.1), (std::f64::consts::FRAC_PI_4, std::f64::consts::FRAC_PI_4)] {
            let st = run_qaoa(&spec, &QaoaParams::p1(g, b), 24).unwrap();
            let z = expectations(&st, &spec).one_body()[0];
            assert!((z + (2.0 * b).sin() * (2.0 * g).sin()).abs() < 1e-14);
        }
        let quarter = std::f64::consts::FRAC_PI_4;
        assert!((analytic_one_body_p1(&spec, quarter, quarter).unwrap()[0] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn cost_table_matches_direct_energy() {
        let spec = random_spec(6, Basis::Spin, 4);
        let t = cost_table(spec.local_h(), spec.local_w());
        let problem = IsingProblem::new(spec.local_h().to_vec(), spec.local_w().clone(), Basis::Spin).unwrap();
        for (x, &c) in t.iter().enumerate() {
            let bits: Vec<bool> = (0..6).map(|a| (x >> a) & 1 == 1).collect();
            assert!((problem.classical_energy(&bits).unwrap() - c).abs() < 1e-12);
        }
    }

    #[test]
    fn basis_state_expectations() {
        let spec = random_spec(3, Basis::Spin, 2);
        let ex = expectations(&SubproblemState::basis_state(3, 0), &spec);
        assert_eq!(ex.one_body(), &[1.0, 1.0, 1.0]);
        assert_eq!(ex.two_body().get(0, 2), 1.0);
        let ex = expectations(&SubproblemState::basis_state(3, 0b101), &spec);
        assert_eq!(ex.one_body(), &[-1.0, 1.0, -1.0]);
        assert_eq!(ex.two_body().get(0, 1), -1.0);
        assert_eq!(ex.two_body().get(0, 2), 1.0);
    }

    #[test]
    fn expectations_match_outcome_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let amps: Vec<Complex64> = (0..256).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        let st = SubproblemState::from_amplitudes(amps.iter().map(|a| a / norm).collect()).unwrap();
        let spec = random_spec(8, Basis::Spin, 3);
        let ex = expectations(&st, &spec);
        let p = st.probabilities();
        let z = |x: usize, a: usize| if (x >> a) & 1 == 0 { 1.0 } else { -1.0 };
        for a in 0..8 {
            let want: f64 = (0..256).map(|x| p[x] * z(x, a)).sum();
            assert!((ex.one_body()[a] - want).abs() < 1e-12);
            for b in (a + 1)..8 {
                let want: f64 = (0..256).map(|x| p[x] * z(x, a) * z(x, b)).sum();
                assert!((ex.two_body().get(a, b) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn occupation_expectations_follow_spin() {
        let occ = random_spec(5, Basis::Occupation, 12);
        let params = QaoaParams::new(vec![0.4, 0.2], vec![0.3, 0.6]).unwrap();
        let st = run_qaoa(&occ, &params, 24).unwrap();
        let ex_occ = expectations(&st, &occ);
        let (h, w, _) = occ.spin_form();
        let spin = SubproblemSpec::new(occ.indices().to_vec(), h, w, Basis::Spin).unwrap();
        let ex_spin = expectations(&run_qaoa(&spin, &params, 24).unwrap(), &spin);
        for a in 0..5 {
            assert!((ex_occ.one_body()[a] - (1.0 - ex_spin.one_body()[a]) / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn qubit_cap_enforced() {
        let spec = random_spec(5, Basis::Spin, 1);
        assert!(matches!(run_qaoa(&spec, &QaoaParams::p1(0.1, 0.1), 4), Err(Error::ResourceLimit(_))));
    }

    #[test]
    fn analytic_rejects_occupation() {
        let spec = random_spec(3, Basis::Occupation, 1);
        assert!(matches!(analytic_one_body_p1(&spec, 0.1, 0.2), Err(Error::Precondition(_))));
        let spin = random_spec(3, Basis::Spin, 1);
        assert!(analytic_one_body_p1(&spin, 0.0, 0.7).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn analytic_two_body_matches_simulator() {
        for seed in 0..20 {
            for basis in [Basis::Spin, Basis::Occupation] {
                let m = 2 + (seed as usize % 7);
                let spec = random_spec(m, basis, 100 + seed);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (g, b) = (rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
                let sim = expectations(&run_qaoa(&spec, &QaoaParams::p1(g, b), 24).unwrap(), &spec);
                let ana = analytic_expectations_p1(&spec, g, b);
                for a in 0..m {
                    assert!((sim.one_body()[a] - ana.one_body()[a]).abs() < 1e-11);
                    for c in 0..m {
                        assert!((sim.two_body().get(a, c) - ana.two_body().get(a, c)).abs() < 1e-11, "seed {seed} ({a},{c})");
                    }
                }
            }
        }
    }

    #[test]
    fn sampling_basis_state_and_determinism() {
        let st = SubproblemState::basis_state(3, 0b110);
        let s = sample(&st, 50, RngSeed(1));
        assert!(s.iter().all(|b| b == &vec![false, true, true]));
        let spec = random_spec(4, Basis::Spin, 2);
        let st = run_qaoa(&spec, &QaoaParams::p1(0.5, 0.3), 24).unwrap();
        assert_eq!(sample(&st, 100, RngSeed(9)), sample(&st, 100, RngSeed(9)));
    }

    #[test]
    fn sampling_uniform_frequencies() {
        let st = SubproblemState::uniform(2);
        let shots = 100_000;
        let s = sample(&st, shots, RngSeed(77));
        let mut counts = [0usize; 4];
        for b in &s {
            counts[usize::from(b[0]) | (usize::from(b[1]) << 1)] += 1;
        }
        let sigma = (shots as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - shots as f64 / 4.0).abs() < 5.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn engine_dispatch() {
        let spec = random_spec(4, Basis::Spin, 5);
        let p1 = QaoaParams::p1(0.3, 0.4);
        let a = Engine::default().evaluate(&spec, &p1).unwrap();
        let b = Engine::AnalyticP1.evaluate(&spec, &p1).unwrap();
        assert!((a.one_body()[2] - b.one_body()[2]).abs() < 1e-12);
        let p2 = QaoaParams::new(vec![0.1, 0.2], vec![0.1, 0.2]).unwrap();
        assert!(Engine::AnalyticP1.evaluate(&spec, &p2).is_err());
        assert!(Engine::StateVector { max_qubits: 3 }.check(&Partition::single(4), 1).is_err());
    }
}
