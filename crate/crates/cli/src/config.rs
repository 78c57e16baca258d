//! JSON experiment specification.
//!
//! ```json
//! {
//!   "noise": { "kind": "contaminated", "sigma1_sq": 0.032, "sigma2_sq": 32.0, "epsilon": [0.01, 0.1] },
//!   "widths": [75, 151, 301],
//!   "len": 20000,
//!   "algorithms": ["lbf", "trimmed:0.05", "bank", "lad"],
//!   "seeds": [1, 2, 3]
//! }
//! ```
//!
//! Every other key is optional; see [`ExperimentSpec`] for the defaults.

use std::path::{Path, PathBuf};

use rlbf_core::robust::InitMethod;
use rlbf_core::sim::BankSpec;
use rlbf_core::{Algorithm, ChannelConfig, MPolicy, NoiseConfig, Scenario};
use serde::Deserialize;

use crate::CliError;

/// Noise law with its swept parameter given as a list.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseGrid {
    Contaminated {
        #[serde(default = "default_sigma1_sq")]
        sigma1_sq: f64,
        #[serde(default = "default_sigma2_sq")]
        sigma2_sq: f64,
        epsilon: Vec<f64>,
    },
    Sas {
        #[serde(default = "default_sigma")]
        sigma: f64,
        alpha: Vec<f64>,
    },
}

fn default_sigma1_sq() -> f64 {
    0.032
}

fn default_sigma2_sq() -> f64 {
    32.0
}

fn default_sigma() -> f64 {
    0.09
}

impl NoiseGrid {
    pub fn points(&self) -> Vec<NoiseConfig> {
        match self {
            NoiseGrid::Contaminated { sigma1_sq, sigma2_sq, epsilon } => epsilon
                .iter()
                .map(|&epsilon| NoiseConfig::ContaminatedGaussian {
                    sigma1_sq: *sigma1_sq,
                    sigma2_sq: *sigma2_sq,
                    epsilon,
                })
                .collect(),
            NoiseGrid::Sas { sigma, alpha } => {
                alpha.iter().map(|&alpha| NoiseConfig::SymmetricAlphaStable { alpha, sigma: *sigma }).collect()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub channel: ChannelConfig,
    pub noise: NoiseGrid,
    /// Window widths `K`.
    pub widths: Vec<usize>,
    /// Stream length `T`.
    #[serde(default = "default_len")]
    pub len: usize,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<Algorithm>,
    #[serde(default = "default_m_policy")]
    pub m_policy: MPolicy,
    #[serde(default)]
    pub bank: BankSpec,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_eta0")]
    pub eta0: f64,
    #[serde(default)]
    pub init: InitMethod,
    /// IRLS iterations of the LAD baseline.
    #[serde(default = "default_lad_iters")]
    pub lad_iters: usize,
    /// CSV destination; standard output when absent.
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub record_timing: bool,
}

fn default_len() -> usize {
    20_000
}

fn default_algorithms() -> Vec<Algorithm> {
    vec![Algorithm::Lbf, Algorithm::Bank]
}

fn default_m_policy() -> MPolicy {
    MPolicy::Adaptive
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

fn default_eta0() -> f64 {
    0.99
}

fn default_lad_iters() -> usize {
    10
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::config(offending_key(&e.to_string()), e.to_string()))
    }

    /// Checks every combination the grid will run. Errors name the key to fix.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |key: &str, e: rlbf_core::Error| CliError::config(key, e.to_string());
        self.channel.validate().map_err(|e| bad("channel", e))?;
        if self.widths.is_empty() {
            return Err(CliError::config("widths", "at least one window width is required"));
        }
        if self.seeds.is_empty() {
            return Err(CliError::config("seeds", "at least one seed is required"));
        }
        if self.algorithms.is_empty() {
            return Err(CliError::config("algorithms", "at least one algorithm is required"));
        }
        let points = self.noise.points();
        if points.is_empty() {
            return Err(CliError::config("noise", "the swept noise parameter list is empty"));
        }
        for p in &points {
            p.validate().map_err(|e| bad("noise", e))?;
        }
        if !(self.eta0 > 0.0 && self.eta0 < 1.0) {
            return Err(CliError::config("eta0", format!("{} outside (0, 1)", self.eta0)));
        }
        if self.lad_iters == 0 {
            return Err(CliError::config("lad_iters", "must be positive"));
        }
        for &width in &self.widths {
            let sc = self.scenario(width, points[0], self.seeds[0]);
            if width % 2 == 0 || width < 3 {
                return Err(CliError::config("widths", format!("K = {width} must be odd and at least 3")));
            }
            if self.len <= sc.first_scored() + width / 2 {
                return Err(CliError::config(
                    "len",
                    format!("T = {} leaves no scored windows for K = {width}", self.len),
                ));
            }
            if let MPolicy::Fixed(m) = self.m_policy {
                if m == 0 || m > sc.m_max() {
                    return Err(CliError::config("m_policy", format!("m = {m} outside [1, {}]", sc.m_max())));
                }
            }
            if self.algorithms.contains(&Algorithm::Bank) {
                let n = self.channel.n;
                let m = match self.m_policy {
                    MPolicy::Fixed(m) => m,
                    _ => 1,
                };
                self.bank.config(width).and_then(|cfg| cfg.validate(width, n, m)).map_err(|e| bad("bank", e))?;
            }
            sc.validate().map_err(|e| bad("algorithms", e))?;
        }
        Ok(())
    }

    pub fn scenario(&self, width: usize, noise: NoiseConfig, seed: u64) -> Scenario {
        let mut sc = Scenario::new(noise, width, self.len, seed);
        sc.channel = self.channel.clone();
        sc.algorithms = self.algorithms.clone();
        sc.m_policy = self.m_policy;
        sc.bank = self.bank.clone();
        sc.eta0 = self.eta0;
        sc.init = self.init;
        sc.lad.max_iters = self.lad_iters;
        sc.record_timing = self.record_timing;
        sc
    }

    /// All runs in output order: width, then noise point, then seed.
    pub fn scenarios(&self) -> Vec<Scenario> {
        let points = self.noise.points();
        let mut out = Vec::new();
        for &width in &self.widths {
            for &noise in &points {
                for &seed in &self.seeds {
                    out.push(self.scenario(width, noise, seed));
                }
            }
        }
        out
    }
}

/// Pulls the field name out of a serde_json message.
fn offending_key(msg: &str) -> String {
    for marker in ["unknown field `", "missing field `", "duplicate field `"] {
        if let Some(rest) = msg.split(marker).nth(1) {
            if let Some(key) = rest.split('`').next() {
                return key.to_string();
            }
        }
    }
    "config".to_string()
}
