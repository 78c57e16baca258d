use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{gen_channel, gen_noise, gen_output, gen_qpsk, ChannelConfig, NoiseConfig};
use crate::bank::{BankConfig, BankTracker, LevelSolver, Ranking};
use crate::basis::{hypermodel_basis, identifiability_bound, BasisSet};
use crate::lad::{LadConfig, LadTracker};
use crate::lbf::{Frame, LbfTracker};
use crate::robust::{InitMethod, TrimConfig, TrimmedTracker};
use crate::tracking::{MPolicy, Tracker};
use crate::{Error, Result};

/// Estimator run in an experiment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Algorithm {
    /// Plain LBF.
    Lbf,
    /// Plain LBF on the outlier-free twin of the noise realization.
    LbfClean,
    /// Sequentially trimmed LBF with `δ = int[μK]`.
    Trimmed {
        mu: f64,
    },
    /// Cross-validated bank of trimmed estimators.
    Bank,
    Lad,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Algorithm::Lbf => f.write_str("lbf"),
            Algorithm::LbfClean => f.write_str("lbf-clean"),
            Algorithm::Trimmed { mu } => write!(f, "trimmed:{mu}"),
            Algorithm::Bank => f.write_str("bank"),
            Algorithm::Lad => f.write_str("lad"),
        }
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lbf" => Ok(Algorithm::Lbf),
            "lbf-clean" => Ok(Algorithm::LbfClean),
            "bank" | "adaptive-bank" => Ok(Algorithm::Bank),
            "lad" => Ok(Algorithm::Lad),
            _ => {
                let mu = s
                    .strip_prefix("trimmed:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .filter(|mu| (0.0..1.0).contains(mu))
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown algorithm `{s}`")))?;
                Ok(Algorithm::Trimmed { mu })
            }
        }
    }
}

impl Serialize for Algorithm {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Algorithm {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Bank layout in terms of window fractions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BankSpec {
    pub mu: Vec<f64>,
    /// Decision window `L`.
    pub window: usize,
    pub ranking: Ranking,
    pub solver: LevelSolver,
}

impl Default for BankSpec {
    fn default() -> Self {
        Self { mu: vec![0.005, 0.05, 0.15], window: 40, ranking: Ranking::Shared, solver: LevelSolver::Refactor }
    }
}

impl BankSpec {
    pub fn config(&self, width: usize) -> Result<BankConfig> {
        let mut cfg = BankConfig::from_mu(&self.mu, width, self.window, self.ranking)?;
        cfg.solver = self.solver;
        Ok(cfg)
    }
}

/// One Monte-Carlo realization and the estimators to run on it.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub channel: ChannelConfig,
    pub noise: NoiseConfig,
    /// Window width `K`.
    pub width: usize,
    /// Stream length `T`.
    pub len: usize,
    pub seed: u64,
    pub algorithms: Vec<Algorithm>,
    pub m_policy: MPolicy,
    pub bank: BankSpec,
    pub eta0: f64,
    pub init: InitMethod,
    pub lad: LadConfig,
    /// Time each window's estimator call.
    pub record_timing: bool,
    /// Keep per-window squared errors.
    pub keep_traces: bool,
}

impl Scenario {
    /// Defaults for everything but the noise law, width and length.
    pub fn new(noise: NoiseConfig, width: usize, len: usize, seed: u64) -> Self {
        Self {
            channel: ChannelConfig::default(),
            noise,
            width,
            len,
            seed,
            algorithms: vec![Algorithm::Lbf, Algorithm::Bank],
            m_policy: MPolicy::Adaptive,
            bank: BankSpec::default(),
            eta0: 0.99,
            init: InitMethod::Lad,
            lad: LadConfig::default(),
            record_timing: false,
            keep_traces: false,
        }
    }

    fn half(&self) -> usize {
        self.width / 2
    }

    /// First scored window: the edge plus a burn-in of `2K`.
    pub fn first_scored(&self) -> usize {
        self.half() + 2 * self.width
    }

    /// Largest basis count the scenario may use.
    pub fn m_max(&self) -> usize {
        identifiability_bound(self.width, self.channel.n).clamp(1, self.width)
    }

    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        self.noise.validate()?;
        if self.width % 2 == 0 || self.width < 3 {
            return Err(Error::InvalidArgument(format!("K = {} must be odd and at least 3", self.width)));
        }
        if self.len <= self.first_scored() + self.half() {
            return Err(Error::InvalidArgument(format!(
                "T = {} leaves no scored windows for K = {}",
                self.len, self.width
            )));
        }
        let n = self.channel.n;
        let m_max = match self.m_policy {
            MPolicy::Fixed(m) if m == 0 || m > self.m_max() => {
                return Err(Error::InvalidArgument(format!("m = {m} outside [1, {}]", self.m_max())))
            }
            MPolicy::Fixed(m) => m,
            _ => 1,
        };
        for alg in &self.algorithms {
            match alg {
                Algorithm::Trimmed { mu } => {
                    let trim = TrimConfig::from_mu(*mu, self.width)?;
                    if trim.retained() < n * m_max {
                        return Err(Error::Identifiability { retained: trim.retained(), required: n * m_max });
                    }
                }
                Algorithm::Bank => self.bank.config(self.width)?.validate(self.width, n, m_max)?,
                _ => {}
            }
        }
        Ok(())
    }

    fn tracker(&self, alg: Algorithm, basis: &BasisSet) -> Result<Box<dyn Tracker>> {
        let n = self.channel.n;
        Ok(match alg {
            Algorithm::Lbf | Algorithm::LbfClean => Box::new(LbfTracker::new(basis, n, self.m_policy, self.eta0)?),
            Algorithm::Trimmed { mu } => Box::new(TrimmedTracker::new(
                basis,
                n,
                TrimConfig::from_mu(mu, self.width)?,
                self.m_policy,
                self.eta0,
                self.init,
            )?),
            Algorithm::Bank => Box::new(BankTracker::new(
                basis,
                n,
                self.bank.config(self.width)?,
                self.m_policy,
                self.eta0,
                self.init,
            )?),
            Algorithm::Lad => Box::new(LadTracker::new(basis, n, self.lad.clone(), self.m_policy, self.eta0)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlgorithmResult {
    pub algorithm: Algorithm,
    /// Time-averaged `‖θ̂(t) − θ(t)‖²` over the scored windows.
    pub mse: f64,
    pub mean_m: f64,
    /// Mean trimming level (of the selected member for a bank).
    pub mean_delta: f64,
    pub degraded: usize,
    pub scored: usize,
    /// Mean time per estimator call, when recorded.
    pub frame_time_ms: Option<f64>,
    pub trace: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunResult {
    pub seed: u64,
    pub width: usize,
    pub len: usize,
    pub results: Vec<AlgorithmResult>,
}

impl RunResult {
    pub fn get(&self, alg: Algorithm) -> Option<&AlgorithmResult> {
        self.results.iter().find(|r| r.algorithm == alg)
    }
}

/// Generates one realization and runs every requested estimator on it.
/// Windows centered in `[k, T − k − 1]` are processed; the MSE averages
/// those from `k + 2K` on.
pub fn run_experiment(sc: &Scenario) -> Result<RunResult> {
    sc.validate()?;
    let n = sc.channel.n;
    let basis = hypermodel_basis(&sc.channel.hypermodel()?, sc.width, sc.m_max())?;
    let u = gen_qpsk(sc.len, sc.seed);
    let theta = gen_channel(&sc.channel, sc.len, sc.seed)?;
    let y = gen_output(&u, &theta, &gen_noise(&sc.noise, sc.len, sc.seed)?);
    let y_clean = if sc.algorithms.contains(&Algorithm::LbfClean) {
        gen_output(&u, &theta, &gen_noise(&sc.noise.clean_twin(), sc.len, sc.seed)?)
    } else {
        vec![]
    };

    let half = sc.half();
    let results = sc
        .algorithms
        .iter()
        .map(|&alg| {
            let mut tracker = sc.tracker(alg, &basis)?;
            let output = if alg == Algorithm::LbfClean { &y_clean } else { &y };
            let mut acc = Accumulator::default();
            let mut trace = sc.keep_traces.then(Vec::new);
            for t in half..sc.len - half {
                let frame = Frame::from_stream(&u, output, t, half, n)?;
                let started = sc.record_timing.then(Instant::now);
                let step = tracker.step(&frame).map_err(|e| match e {
                    Error::Numerical { .. } => e,
                    other => Error::Numerical { window: t, reason: other.to_string() },
                })?;
                if let Some(s) = started {
                    acc.elapsed += s.elapsed().as_secs_f64();
                    acc.timed += 1;
                }
                if t < sc.first_scored() {
                    continue;
                }
                let err: f64 = (0..n).map(|i| (step.theta[i] - theta[i][t]).norm_sqr()).sum();
                if !err.is_finite() {
                    return Err(Error::Numerical { window: t, reason: "non-finite estimate".into() });
                }
                acc.add(err, step.m, step.delta, step.degraded);
                if let Some(tr) = trace.as_mut() {
                    tr.push(err);
                }
            }
            Ok(acc.finish(alg, trace))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunResult { seed: sc.seed, width: sc.width, len: sc.len, results })
}

#[derive(Default)]
struct Accumulator {
    err: f64,
    m: f64,
    delta: f64,
    degraded: usize,
    scored: usize,
    elapsed: f64,
    timed: usize,
}

impl Accumulator {
    fn add(&mut self, err: f64, m: usize, delta: usize, degraded: bool) {
        self.err += err;
        self.m += m as f64;
        self.delta += delta as f64;
        self.degraded += degraded as usize;
        self.scored += 1;
    }

    fn finish(self, algorithm: Algorithm, trace: Option<Vec<f64>>) -> AlgorithmResult {
        let count = self.scored.max(1) as f64;
        AlgorithmResult {
            algorithm,
            mse: self.err / count,
            mean_m: self.m / count,
            mean_delta: self.delta / count,
            degraded: self.degraded,
            scored: self.scored,
            frame_time_ms: (self.timed > 0).then(|| 1e3 * self.elapsed / self.timed as f64),
            trace,
        }
    }
}
