//! Least absolute deviations baseline, solved by iteratively reweighted
//! least squares on complex residual moduli.

use nalgebra::DVector;

use crate::basis::BasisSet;
use crate::lbf::{accumulate, lbf_estimate, residuals, solve_normal, theta_center, Frame};
use crate::robust::{noise_variance, theta_variance, trim_set, AdaptiveState};
use crate::tracking::{MPolicy, Step, Tracker};
use crate::{Error, Result, C64};

#[derive(Clone, Debug, PartialEq)]
pub struct LadConfig {
    pub max_iters: usize,
    /// Lower clamp on residual moduli in the weights.
    pub epsilon_reg: f64,
}

impl Default for LadConfig {
    fn default() -> Self {
        Self { max_iters: 10, epsilon_reg: 1e-6 }
    }
}

#[derive(Clone, Debug)]
pub struct LadEstimate {
    pub beta: DVector<C64>,
    pub theta: Vec<C64>,
    /// `Σ |y − βᴴψ|` at `beta`.
    pub objective: f64,
    /// Objective after each accepted iterate, starting point first.
    pub trace: Vec<f64>,
}

fn objective(res: &[C64]) -> f64 {
    res.iter().map(|r| r.norm()).sum()
}

/// IRLS approximation of the LAD fit. Starts from `warm` or, if absent, the
/// LBF estimate. Stops early at the first iterate that would increase the
/// objective.
pub fn lad_estimate(
    frame: &Frame,
    basis: &BasisSet,
    cfg: &LadConfig,
    warm: Option<&DVector<C64>>,
) -> Result<LadEstimate> {
    let dim = frame.order() * basis.m();
    if frame.width() < dim {
        return Err(Error::Identifiability { retained: frame.width(), required: dim });
    }
    let mut beta = match warm {
        Some(b) if b.len() == dim => b.clone(),
        Some(b) => {
            return Err(Error::InvalidArgument(format!("warm start has {} coefficients, expected {dim}", b.len())))
        }
        None => {
            let est = lbf_estimate(frame, basis)?;
            if est.cond_flag {
                return Err(Error::Singular("LBF starting point is ill-conditioned".into()));
            }
            est.beta
        }
    };
    let positions = frame.positions();
    let mut res = residuals(frame, basis, &beta);
    let mut obj = objective(&res);
    let mut trace = vec![obj];
    for _ in 0..cfg.max_iters {
        let candidate = reweighted_step(frame, basis, &positions, &res, cfg.epsilon_reg)
            .or_else(|_| reweighted_step(frame, basis, &positions, &res, cfg.epsilon_reg * 10.0))?;
        let cand_res = residuals(frame, basis, &candidate);
        let cand_obj = objective(&cand_res);
        if !(cand_obj <= obj) {
            break;
        }
        beta = candidate;
        res = cand_res;
        obj = cand_obj;
        trace.push(obj);
    }
    let theta = theta_center(&beta, basis, frame.order());
    Ok(LadEstimate { beta, theta, objective: obj, trace })
}

fn reweighted_step(
    frame: &Frame,
    basis: &BasisSet,
    positions: &[usize],
    res: &[C64],
    eps: f64,
) -> Result<DVector<C64>> {
    let weights: Vec<f64> = res.iter().map(|r| 1.0 / r.norm().max(eps)).collect();
    let ne = accumulate(frame, basis, positions, Some(&weights));
    solve_normal(&ne).map(|(_, beta)| beta).map_err(|_| Error::Singular("weighted LAD normal equations".into()))
}

/// Re-expresses coefficients for a different basis count by keeping the
/// shared leading functions of every tap.
pub(crate) fn resize_beta(beta: &DVector<C64>, n: usize, from: usize, to: usize) -> DVector<C64> {
    DVector::from_fn(n * to, |i, _| {
        let (a, l) = (i / to, i % to);
        if l < from {
            beta[a * from + l]
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// Fraction of largest residuals left out of the LAD noise variance estimate.
pub const LAD_VARIANCE_TRIM: f64 = 0.15;

/// Sliding-window LAD estimator, warm-started from the previous window.
/// With a threshold policy the noise variance is estimated from the
/// residuals that remain after discarding the largest 15%.
pub struct LadTracker {
    bases: Vec<BasisSet>,
    cfg: LadConfig,
    state: AdaptiveState,
    prev: Option<(DVector<C64>, usize)>,
}

impl LadTracker {
    pub fn new(basis: &BasisSet, order: usize, cfg: LadConfig, policy: MPolicy, eta0: f64) -> Result<Self> {
        let state = AdaptiveState::new(policy, basis.lambdas().to_vec(), order, eta0)?;
        Ok(Self { bases: basis.prefixes(), cfg, state, prev: None })
    }
}

impl Tracker for LadTracker {
    fn step(&mut self, frame: &Frame) -> Result<Step> {
        let n = frame.order();
        let width = frame.width();
        self.state.prime(frame);
        let m = self.state.next_m(width, self.bases.len());
        let basis = &self.bases[m - 1];
        let warm = self.prev.as_ref().map(|(b, pm)| resize_beta(b, n, *pm, m));
        let est = lad_estimate(frame, basis, &self.cfg, warm.as_ref())
            .map_err(|e| Error::Numerical { window: frame.center(), reason: e.to_string() })?;

        let res = residuals(frame, basis, &est.beta);
        let delta = (LAD_VARIANCE_TRIM * width as f64).floor() as usize;
        let kept = trim_set(&res, delta, &[], 1)?.retained;
        self.state.observe(noise_variance(&res, &kept), theta_variance(&est.beta, basis, n));
        self.state.observe_regressor(frame.phi(frame.half()));
        self.prev = Some((est.beta, m));
        Ok(Step { theta: est.theta, m, delta: 0, degraded: false })
    }
}
