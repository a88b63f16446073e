//! Experiment configuration files.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use scmf_core::scmf::{FitConfig, ScmfConfig, MAX_ETA};
use scmf_core::variational::{GridSpec, OptimizerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Landscape,
    Concentration,
    Convergence,
    Multistart,
    ScalingK,
    ScalingP,
    Clique,
    Baseline,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Landscape => "landscape",
            Kind::Concentration => "concentration",
            Kind::Convergence => "convergence",
            Kind::Multistart => "multistart",
            Kind::ScalingK => "scaling-k",
            Kind::ScalingP => "scaling-p",
            Kind::Clique => "clique",
            Kind::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomGraphSpec {
    pub n: usize,
    pub edge_prob: f64,
    pub w_min: f64,
    pub w_max: f64,
}

impl Default for RandomGraphSpec {
    fn default() -> Self {
        Self { n: 14, edge_prob: 0.7, w_min: 0.1, w_max: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    /// SK sizes (spins before pinning one).
    pub n: Vec<usize>,
    pub k: Vec<usize>,
    pub p: Vec<usize>,
    pub ensemble: usize,
    pub seed: u64,
    pub eta: Vec<f64>,
    /// Optimize angles per instance; otherwise use the SK heuristic.
    pub optimize: bool,
    pub scmf: ScmfConfig,
    pub optimizer: OptimizerConfig,
    pub grid: GridSpec,
    pub fit: FitConfig,
    pub starts: usize,
    /// Clique graph file; random graphs are drawn when absent.
    pub graph: Option<PathBuf>,
    pub random_graph: RandomGraphSpec,
    /// Clique penalties; empty means `2 max(w) + 0.1`.
    pub lambda: Vec<f64>,
    pub shots: usize,
    pub local_search_iters: usize,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: Kind::ScalingK,
            n: vec![16],
            k: vec![1],
            p: vec![1],
            ensemble: 1,
            seed: 0,
            eta: vec![1.0],
            optimize: true,
            scmf: ScmfConfig::default(),
            optimizer: OptimizerConfig::default(),
            grid: GridSpec { gamma: (0.0, 0.4), gamma_steps: 11, beta: (0.0, std::f64::consts::FRAC_PI_2), beta_steps: 11 },
            fit: FitConfig::default(),
            starts: 300,
            graph: None,
            random_graph: RandomGraphSpec::default(),
            lambda: Vec::new(),
            shots: 200,
            local_search_iters: 100,
            out: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    /// Parses a JSON config; `kind` is mandatory, everything else has defaults.
    pub fn from_json(text: &str, source: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).with_context(|| format!("{source}: not valid JSON"))?;
        ensure!(value.get("kind").is_some(), "{source}: missing required field `kind`");
        let cfg: Self = serde_json::from_value(value).with_context(|| format!("{source}: invalid experiment config"))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.ensemble >= 1, "ensemble must be at least 1");
        ensure!(!self.eta.is_empty() && !self.p.is_empty() && !self.k.is_empty(), "eta, p and k need at least one value");
        ensure!(self.eta.iter().all(|&e| (0.0..=MAX_ETA).contains(&e)), "eta values must lie in [0, {MAX_ETA}]");
        ensure!(self.p.iter().all(|&p| p >= 1), "p values must be at least 1");
        self.scmf.validate()?;
        for &p in &self.p {
            self.optimizer.validate(p)?;
        }
        match self.kind {
            Kind::Clique => {
                if let Some(g) = &self.graph {
                    ensure!(g.is_file(), "graph file {} does not exist", g.display());
                } else {
                    ensure!(self.random_graph.n >= 2, "random graphs need at least 2 vertices");
                }
                ensure!(self.lambda.iter().all(|&l| l > 0.0), "lambda values must be positive");
                ensure!(self.shots >= 1, "shots must be at least 1");
            }
            _ => {
                ensure!(!self.n.is_empty(), "n needs at least one value");
                for &n in &self.n {
                    ensure!(n >= 2, "SK instances need n >= 2, got {n}");
                    for &k in &self.k {
                        if self.kind != Kind::Baseline && !(1..n).contains(&k) {
                            bail!("k={k} is not in 1..={} for n={n}", n - 1);
                        }
                    }
                }
            }
        }
        if self.kind == Kind::Landscape {
            ensure!(self.grid.gamma_steps >= 1 && self.grid.beta_steps >= 1, "landscape grid is empty");
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out = PathBuf::new();
        let text = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))[..16].to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_is_required_and_unknown_fields_rejected() {
        assert!(ExperimentConfig::from_json("{}", "t").is_err());
        assert!(ExperimentConfig::from_json(r#"{"kind": "scaling-k", "bogus": 1}"#, "t").is_err());
        let c = ExperimentConfig::from_json(r#"{"kind": "clique", "eta": [0.5, 1.0]}"#, "t").unwrap();
        assert_eq!(c.kind, Kind::Clique);
        assert_eq!(c.eta, vec![0.5, 1.0]);
    }

    #[test]
    fn hash_ignores_output_directory() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { out: "elsewhere".into(), ..a.clone() };
        let c = ExperimentConfig { seed: 1, ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn validation() {
        let ok = ExperimentConfig { n: vec![8], k: vec![1, 2], ..Default::default() };
        ok.validate().unwrap();
        assert!(ExperimentConfig { k: vec![16], ..ok.clone() }.validate().is_err());
        assert!(ExperimentConfig { ensemble: 0, ..ok.clone() }.validate().is_err());
        assert!(ExperimentConfig { eta: vec![5.0], ..ok.clone() }.validate().is_err());
        let missing = ExperimentConfig { kind: Kind::Clique, graph: Some("/nonexistent/g.json".into()), ..ok };
        assert!(missing.validate().is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let c = ExperimentConfig { kind: Kind::Multistart, n: vec![10, 12], ..Default::default() };
        let text = serde_json::to_string_pretty(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text, "t").unwrap(), c);
    }
}
