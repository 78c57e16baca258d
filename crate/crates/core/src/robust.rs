//! Sequential trimming and adaptive tuning.
//!
//! The samples rejected in window `t` are the ones with the largest errors
//! under the estimate from window `t − 1`. Samples known to be missing can be
//! excluded up front.

use nalgebra::{DMatrix, DVector};

use crate::basis::{identifiability_bound, select_m_by_threshold, BasisSet};
use crate::lad::{lad_estimate, LadConfig};
use crate::lbf::{self, accumulate, residuals, solve_normal, theta_at, theta_center, Frame, NormalEquations};
use crate::linalg::{trace_inverse, HpdFactor};
use crate::tracking::{MPolicy, Step, Tracker};
use crate::{Error, Result, C64};

/// Trimming level for one estimator: `δ` outlier-driven rejections plus an
/// optional set of positions known to be missing.
#[derive(Clone, Debug, PartialEq)]
pub struct TrimConfig {
    width: usize,
    delta: usize,
    forced: Vec<usize>,
}

impl TrimConfig {
    /// `δ = int[μK]`.
    pub fn from_mu(mu: f64, width: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&mu) {
            return Err(Error::InvalidArgument(format!("trimming fraction {mu} outside [0, 1)")));
        }
        Self::from_delta((mu * width as f64).floor() as usize, width)
    }

    /// `K̃ = int[γK]` retained samples, `δ = K − K̃`.
    pub fn from_gamma(gamma: f64, width: usize) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidArgument(format!("retained fraction {gamma} outside (0, 1]")));
        }
        Self::from_delta(width - (gamma * width as f64).floor() as usize, width)
    }

    pub fn from_delta(delta: usize, width: usize) -> Result<Self> {
        if width % 2 == 0 || delta >= width {
            return Err(Error::InvalidArgument(format!("cannot trim {delta} of {width} samples")));
        }
        Ok(Self { width, delta, forced: vec![] })
    }

    /// Positions excluded regardless of their errors.
    pub fn with_forced(mut self, mut forced: Vec<usize>) -> Result<Self> {
        forced.sort_unstable();
        forced.dedup();
        if forced.last().is_some_and(|&p| p >= self.width) {
            return Err(Error::InvalidArgument("forced exclusion outside the window".into()));
        }
        if forced.len() + self.delta >= self.width {
            return Err(Error::InvalidArgument("nothing left after exclusions".into()));
        }
        self.forced = forced;
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn delta(&self) -> usize {
        self.delta
    }

    pub fn forced(&self) -> &[usize] {
        &self.forced
    }

    /// Number of samples entering the fit.
    pub fn retained(&self) -> usize {
        self.width - self.delta - self.forced.len()
    }

    pub fn gamma(&self) -> f64 {
        (self.width - self.delta) as f64 / self.width as f64
    }

    pub fn mu(&self) -> f64 {
        1.0 - self.gamma()
    }
}

/// Retained and rejected positions, both ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrimSets {
    pub retained: Vec<usize>,
    pub rejected: Vec<usize>,
}

impl TrimSets {
    pub fn full(width: usize) -> Self {
        Self { retained: (0..width).collect(), rejected: vec![] }
    }

    pub fn contains(&self, p: usize) -> bool {
        self.retained.binary_search(&p).is_ok()
    }
}

/// Errors of the previous window's estimate on the current window. Position
/// `p < K − 1` uses the previous trajectory one step later (same time
/// instant); the newest sample is predicted with `f(k)`.
pub fn frame_errors(beta_prev: &DVector<C64>, prev_basis: &BasisSet, frame: &Frame) -> Vec<C64> {
    let n = frame.order();
    let last = frame.width() - 1;
    (0..frame.width())
        .map(|p| {
            let theta = theta_at(beta_prev, prev_basis, n, (p + 1).min(last));
            frame.y()[p] - lbf::predict(&theta, frame.phi(p))
        })
        .collect()
}

/// Positions sorted by non-decreasing error modulus; equal moduli keep
/// time order.
pub fn rank_by_modulus(errors: &[C64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..errors.len()).collect();
    order.sort_by(|&a, &b| errors[a].norm_sqr().total_cmp(&errors[b].norm_sqr()).then(a.cmp(&b)));
    order
}

/// Rejects the forced positions and then the `delta` largest-modulus errors
/// among the rest. `required` is the number of unknowns `mn`.
pub fn trim_set(errors: &[C64], delta: usize, forced: &[usize], required: usize) -> Result<TrimSets> {
    Ok(nested_trim_sets(errors, &[delta], forced, required)?.remove(0))
}

/// Trim sets for several levels from one shared ranking, so the rejected
/// sets are nested. `deltas` must be non-decreasing.
pub fn nested_trim_sets(errors: &[C64], deltas: &[usize], forced: &[usize], required: usize) -> Result<Vec<TrimSets>> {
    if deltas.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("trimming levels must be non-decreasing".into()));
    }
    let width = errors.len();
    let mut excluded = vec![false; width];
    for &p in forced {
        if p >= width {
            return Err(Error::InvalidArgument(format!("forced exclusion {p} outside the window")));
        }
        excluded[p] = true;
    }
    let candidates: Vec<usize> = rank_by_modulus(errors).into_iter().filter(|&p| !excluded[p]).collect();
    deltas
        .iter()
        .map(|&delta| {
            let keep = candidates.len().saturating_sub(delta);
            if keep < required {
                return Err(Error::Identifiability { retained: keep, required });
            }
            let mut retained = candidates[..keep].to_vec();
            retained.sort_unstable();
            let mut rejected: Vec<usize> = candidates[keep..].iter().chain(forced).copied().collect();
            rejected.sort_unstable();
            rejected.dedup();
            Ok(TrimSets { retained, rejected })
        })
        .collect()
}

/// Least-squares fit over the retained positions of one window.
#[derive(Clone, Debug)]
pub struct TrimmedEstimate {
    pub beta: DVector<C64>,
    pub theta: Vec<C64>,
    pub sets: TrimSets,
    pub normal: NormalEquations,
    /// In-window residuals at every position, rejected ones included.
    pub residuals: Vec<C64>,
    factor: HpdFactor,
}

impl TrimmedEstimate {
    pub fn omega(&self) -> &[usize] {
        &self.sets.retained
    }

    pub fn omega_bar(&self) -> &[usize] {
        &self.sets.rejected
    }

    pub fn factor(&self) -> &HpdFactor {
        &self.factor
    }

    /// `P_R⁻¹`.
    pub fn p_inverse(&self) -> DMatrix<C64> {
        self.factor.inverse()
    }
}

/// Fits `β̂_R = P_R⁻¹ p_R` over `sets.retained`. Fails with
/// [`Error::IllConditioned`] if `P_R` cannot be factored.
pub fn trimmed_estimate(frame: &Frame, basis: &BasisSet, sets: &TrimSets) -> Result<TrimmedEstimate> {
    let normal = lbf::normal_equations(frame, basis, &sets.retained)?;
    let (factor, beta) = solve_normal(&normal)?;
    let theta = theta_center(&beta, basis, frame.order());
    let residuals = residuals(frame, basis, &beta);
    Ok(TrimmedEstimate { beta, theta, sets: sets.clone(), normal, residuals, factor })
}

/// `σ̂_e² = (1/K̃) Σ_{j∈Ω} |ε(t+j|t)|²`.
pub fn noise_variance(residuals: &[C64], omega: &[usize]) -> f64 {
    if omega.is_empty() {
        return 0.0;
    }
    omega.iter().map(|&p| residuals[p].norm_sqr()).sum::<f64>() / omega.len() as f64
}

/// Spread of the estimated trajectory around its window mean,
/// `(1/K)‖β‖² − ‖Gβ‖²`, clamped at zero.
pub fn theta_variance(beta: &DVector<C64>, basis: &BasisSet, n: usize) -> f64 {
    let m = basis.m();
    let g = basis.g();
    let mean_sq: f64 = (0..n).map(|a| (0..m).map(|l| beta[a * m + l] * g[l]).sum::<C64>().norm_sqr()).sum();
    (beta.norm_squared() / basis.width() as f64 - mean_sq).max(0.0)
}

/// `Φ̂ ← η₀ Φ̂ + (1 − η₀) φφᴴ`.
pub fn phi_update(phi_hat: &mut DMatrix<C64>, phi: &[C64], eta0: f64) {
    let n = phi.len();
    for i in 0..n {
        for j in 0..n {
            phi_hat[(i, j)] = phi_hat[(i, j)] * eta0 + phi[i] * phi[j].conj() * (1.0 - eta0);
        }
    }
}

/// Basis count from the threshold rule with `M̃ = floor(K̃/n)`. The second
/// element is `true` when `Φ̂` had to be diagonally loaded.
pub fn adaptive_m(
    lambdas: &[f64],
    sigma_e_sq: f64,
    sigma_theta_sq: f64,
    phi_hat: &DMatrix<C64>,
    k_tilde: usize,
    n: usize,
) -> (usize, bool) {
    if !(sigma_theta_sq > 0.0) {
        return (1, false);
    }
    let (tr, loaded) = trace_inverse(phi_hat);
    let m = select_m_by_threshold(lambdas, sigma_e_sq * tr / sigma_theta_sq, identifiability_bound(k_tilde, n));
    (m, loaded)
}

/// Running quantities behind the basis-count policy.
#[derive(Clone, Debug)]
pub struct AdaptiveState {
    policy: MPolicy,
    lambdas: Vec<f64>,
    order: usize,
    eta0: f64,
    sigma_e_sq: Option<f64>,
    sigma_theta_sq: Option<f64>,
    phi_hat: Option<DMatrix<C64>>,
    m_hat: usize,
    loaded_events: usize,
}

impl AdaptiveState {
    pub fn new(policy: MPolicy, lambdas: Vec<f64>, order: usize, eta0: f64) -> Result<Self> {
        if !(eta0 > 0.0 && eta0 < 1.0) {
            return Err(Error::InvalidArgument(format!("forgetting constant {eta0} outside (0, 1)")));
        }
        match policy {
            MPolicy::Fixed(0) => return Err(Error::InvalidArgument("fixed basis count must be positive".into())),
            MPolicy::Known { sigma_e_sq, sigma_theta_sq } if !(sigma_e_sq >= 0.0 && sigma_theta_sq >= 0.0) => {
                return Err(Error::InvalidArgument("known variances must be non-negative".into()))
            }
            MPolicy::Known { .. } | MPolicy::Adaptive if lambdas.is_empty() => {
                return Err(Error::InvalidArgument("threshold policies need basis eigenvalues".into()))
            }
            _ => {}
        }
        Ok(Self {
            policy,
            lambdas,
            order,
            eta0,
            sigma_e_sq: None,
            sigma_theta_sq: None,
            phi_hat: None,
            m_hat: 1,
            loaded_events: 0,
        })
    }

    /// Seeds `Φ̂` with the average `φφᴴ` over the first frame.
    pub fn prime(&mut self, frame: &Frame) {
        if self.phi_hat.is_some() {
            return;
        }
        let n = self.order;
        let mut acc = DMatrix::<C64>::zeros(n, n);
        for p in 0..frame.width() {
            let phi = frame.phi(p);
            for i in 0..n {
                for j in 0..n {
                    acc[(i, j)] += phi[i] * phi[j].conj();
                }
            }
        }
        self.phi_hat = Some(acc / C64::new(frame.width() as f64, 0.0));
    }

    /// Basis count for the next window with `k_tilde` retained samples,
    /// capped at `m_max`. Before any variance estimate exists every
    /// identifiable basis function is admitted, as if `σ̂e² = 0`.
    pub fn next_m(&mut self, k_tilde: usize, m_max: usize) -> usize {
        let n = self.order;
        let variances = match self.policy {
            MPolicy::Fixed(m) => {
                self.m_hat = m.min(m_max);
                return self.m_hat;
            }
            MPolicy::Known { sigma_e_sq, sigma_theta_sq } => Some((sigma_e_sq, sigma_theta_sq)),
            MPolicy::Adaptive => self.sigma_e_sq.zip(self.sigma_theta_sq),
        };
        let m = match (variances, &self.phi_hat) {
            (Some((se, st)), Some(phi_hat)) => {
                let (m, loaded) = adaptive_m(&self.lambdas, se, st, phi_hat, k_tilde, n);
                self.loaded_events += loaded as usize;
                m
            }
            _ => select_m_by_threshold(&self.lambdas, 0.0, identifiability_bound(k_tilde, n)),
        };
        self.m_hat = m.clamp(1, m_max);
        self.m_hat
    }

    /// Records the variance estimates of the window just processed.
    pub fn observe(&mut self, sigma_e_sq: f64, sigma_theta_sq: f64) {
        self.sigma_e_sq = Some(sigma_e_sq);
        self.sigma_theta_sq = Some(sigma_theta_sq);
    }

    /// Forgetting update of `Φ̂` with the center regressor.
    pub fn observe_regressor(&mut self, phi: &[C64]) {
        let n = self.order;
        let phi_hat = self.phi_hat.get_or_insert_with(|| DMatrix::zeros(n, n));
        phi_update(phi_hat, phi, self.eta0);
    }

    pub fn policy(&self) -> MPolicy {
        self.policy
    }

    pub fn sigma_e_sq_hat(&self) -> Option<f64> {
        self.sigma_e_sq
    }

    pub fn sigma_theta_sq_hat(&self) -> Option<f64> {
        self.sigma_theta_sq
    }

    pub fn phi_hat(&self) -> Option<&DMatrix<C64>> {
        self.phi_hat.as_ref()
    }

    pub fn m_hat(&self) -> usize {
        self.m_hat
    }

    /// Number of windows in which `Φ̂` was singular and diagonally loaded.
    pub fn loaded_events(&self) -> usize {
        self.loaded_events
    }
}

/// How the first window is ranked before any previous estimate exists.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMethod {
    /// Residuals of the LAD fit.
    #[default]
    Lad,
    /// Plain LBF followed by five trim-and-refit passes.
    IteratedTrim,
}

const INIT_TRIM_PASSES: usize = 5;

/// Residuals used to rank the first window.
pub(crate) fn initial_errors(
    frame: &Frame,
    basis: &BasisSet,
    init: InitMethod,
    delta: usize,
    forced: &[usize],
) -> Result<Vec<C64>> {
    match init {
        InitMethod::Lad => {
            let est = lad_estimate(frame, basis, &LadConfig::default(), None)?;
            Ok(residuals(frame, basis, &est.beta))
        }
        InitMethod::IteratedTrim => {
            let required = frame.order() * basis.m();
            let mut sets = TrimSets::full(frame.width());
            sets.retained.retain(|p| !forced.contains(p));
            let mut errors = vec![];
            for _ in 0..=INIT_TRIM_PASSES {
                let ne = accumulate(frame, basis, &sets.retained, None);
                let (_, beta) = solve_normal(&ne)?;
                errors = residuals(frame, basis, &beta);
                sets = trim_set(&errors, delta, forced, required)?;
            }
            Ok(errors)
        }
    }
}

/// Sliding-window sequentially trimmed LBF estimator.
pub struct TrimmedTracker {
    bases: Vec<BasisSet>,
    trim: TrimConfig,
    state: AdaptiveState,
    init: InitMethod,
    prev: Option<(DVector<C64>, usize)>,
    last_theta: Option<Vec<C64>>,
}

impl TrimmedTracker {
    pub fn new(
        basis: &BasisSet,
        order: usize,
        trim: TrimConfig,
        policy: MPolicy,
        eta0: f64,
        init: InitMethod,
    ) -> Result<Self> {
        if trim.width() != basis.width() {
            return Err(Error::InvalidArgument("trim configuration and basis differ in width".into()));
        }
        let state = AdaptiveState::new(policy, basis.lambdas().to_vec(), order, eta0)?;
        Ok(Self { bases: basis.prefixes(), trim, state, init, prev: None, last_theta: None })
    }

    pub fn state(&self) -> &AdaptiveState {
        &self.state
    }

    /// Coefficients of the last accepted window and their basis count.
    pub fn last_beta(&self) -> Option<(&DVector<C64>, usize)> {
        self.prev.as_ref().map(|(b, m)| (b, *m))
    }
}

impl Tracker for TrimmedTracker {
    fn step(&mut self, frame: &Frame) -> Result<Step> {
        let n = frame.order();
        self.state.prime(frame);
        let m = self.state.next_m(self.trim.retained(), self.bases.len());
        let basis = &self.bases[m - 1];
        let errors = match &self.prev {
            Some((beta, pm)) => frame_errors(beta, &self.bases[pm - 1], frame),
            None => initial_errors(frame, basis, self.init, self.trim.delta(), self.trim.forced())?,
        };
        let sets = trim_set(&errors, self.trim.delta(), self.trim.forced(), n * m)?;
        let step = match trimmed_estimate(frame, basis, &sets) {
            Ok(est) => {
                let sigma_e_sq = noise_variance(&est.residuals, &sets.retained);
                self.state.observe(sigma_e_sq, theta_variance(&est.beta, basis, n));
                self.last_theta = Some(est.theta.clone());
                self.prev = Some((est.beta, m));
                Step { theta: est.theta, m, delta: self.trim.delta(), degraded: false }
            }
            Err(Error::IllConditioned { cond }) => {
                let theta = self.last_theta.clone().ok_or_else(|| Error::Numerical {
                    window: frame.center(),
                    reason: format!("ill-conditioned first window (condition estimate {cond:e})"),
                })?;
                Step { theta, m, delta: self.trim.delta(), degraded: true }
            }
            Err(e) => return Err(e),
        };
        self.state.observe_regressor(frame.phi(frame.half()));
        Ok(step)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{hypermodel_basis, HyperModel, ParameterModel};
    use crate::lbf::tests::{cn, in_span_frame, jakes_basis, random_frame};
    use crate::lbf::{lbf_estimate, regression_vector, trajectory, LbfTracker};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn trim_config_conventions() {
        let t = TrimConfig::from_mu(0.05, 151).unwrap();
        assert_eq!((t.delta(), t.retained()), (7, 144));
        let t = TrimConfig::from_gamma(0.95, 151).unwrap();
        assert_eq!((t.delta(), t.retained()), (8, 143));
        let t = TrimConfig::from_delta(2, 9).unwrap().with_forced(vec![4, 1, 4]).unwrap();
        assert_eq!(t.forced(), &[1, 4]);
        assert_eq!(t.retained(), 5);
        assert!(TrimConfig::from_mu(1.0, 9).is_err());
        assert!(TrimConfig::from_delta(9, 9).is_err());
    }

    #[test]
    fn frame_errors_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let basis = jakes_basis(21, 3);
        let frame = random_frame(&mut rng, 10, 2);
        let errors = frame_errors(&DVector::zeros(6), &basis, &frame);
        assert_eq!(errors, frame.y());

        // in-span data on a long stream: the previous window's true
        // coefficients predict the current window exactly
        let n = 2;
        let beta_true = DVector::from_fn(n * 3, |_, _| cn(&mut rng));
        let traj = trajectory(&beta_true, &basis, n);
        let len = 40;
        let u: Vec<C64> = (0..len).map(|_| cn(&mut rng)).collect();
        // the parameter path observed by window t-1 = 19
        let mut y = vec![C64::new(0.0, 0.0); len];
        let t = 20;
        let theta_at_time = |s: usize| -> Vec<C64> {
            let p = s + 10 - (t - 1);
            if p < 21 {
                traj[p].clone()
            } else {
                traj[20].clone()
            }
        };
        for s in (t - 10)..=(t + 10) {
            let phi: Vec<C64> = (0..n).map(|a| if s >= a { u[s - a] } else { c(0.0) }).collect();
            y[s] = lbf::predict(&theta_at_time(s), &phi);
        }
        let frame = Frame::from_stream(&u, &y, t, 10, n).unwrap();
        let errors = frame_errors(&beta_true, &basis, &frame);
        assert!(errors.iter().all(|e| e.norm() < 1e-8));

        let mut yo = y.clone();
        yo[t + 3] += c(100.0);
        let frame = Frame::from_stream(&u, &yo, t, 10, n).unwrap();
        let errors = frame_errors(&beta_true, &basis, &frame);
        assert_eq!(*rank_by_modulus(&errors).last().unwrap(), 13);
    }

    #[test]
    fn trim_set_examples() {
        let errors: Vec<C64> = (-2..=2).map(|j: i32| c(j.abs() as f64)).collect();
        let sets = trim_set(&errors, 0, &[], 1).unwrap();
        assert_eq!(sets, TrimSets::full(5));
        let sets = trim_set(&errors, 2, &[], 1).unwrap();
        assert_eq!(sets.rejected, vec![0, 4]);
        assert_eq!(sets.retained, vec![1, 2, 3]);

        let equal = vec![c(1.0); 5];
        assert_eq!(trim_set(&equal, 2, &[], 1).unwrap().rejected, vec![3, 4]);

        let sets = trim_set(&errors, 1, &[2], 1).unwrap();
        assert_eq!(sets.rejected, vec![2, 4]);
        assert!(matches!(trim_set(&errors, 3, &[], 3), Err(Error::Identifiability { retained: 2, required: 3 })));
    }

    // Tie oracle: sort by (-modulus, -index) and take the first delta.
    fn tie_oracle(errors: &[C64], delta: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..errors.len()).collect();
        idx.sort_by(|&a, &b| errors[b].norm_sqr().partial_cmp(&errors[a].norm_sqr()).unwrap().then(b.cmp(&a)));
        let mut out = idx[..delta].to_vec();
        out.sort();
        out
    }

    proptest! {
        #[test]
        fn trim_set_matches_oracle(vals in proptest::collection::vec(0u8..4, 5..15), delta in 0usize..4) {
            let errors: Vec<C64> = vals.iter().map(|&v| c(v as f64)).collect();
            let sets = trim_set(&errors, delta, &[], 1).unwrap();
            prop_assert_eq!(&sets.rejected, &tie_oracle(&errors, delta));
            prop_assert_eq!(sets.retained.len() + sets.rejected.len(), errors.len());
        }

        #[test]
        fn nested_sets_are_nested(vals in proptest::collection::vec(0.0f64..10.0, 21), forced in proptest::collection::vec(0usize..21, 0..3)) {
            let errors: Vec<C64> = vals.iter().map(|&v| c(v)).collect();
            let levels = nested_trim_sets(&errors, &[1, 3, 6], &forced, 2).unwrap();
            for w in levels.windows(2) {
                prop_assert!(w[0].rejected.iter().all(|p| w[1].rejected.contains(p)));
            }
            for l in &levels {
                prop_assert!(forced.iter().all(|p| l.rejected.contains(p)));
            }
        }
    }

    #[test]
    fn zero_trim_is_plain_lbf() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let basis = jakes_basis(31, 3);
        let frame = random_frame(&mut rng, 15, 2);
        let plain = lbf_estimate(&frame, &basis).unwrap();
        let trimmed = trimmed_estimate(&frame, &basis, &TrimSets::full(31)).unwrap();
        assert_eq!(plain.beta, trimmed.beta);
        assert_eq!(plain.theta, trimmed.theta);
    }

    #[test]
    fn trimmed_decomposition_and_outlier_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let basis = jakes_basis(31, 2);
        let frame = random_frame(&mut rng, 15, 2);
        let errors: Vec<C64> = (0..31).map(|_| cn(&mut rng)).collect();
        let sets = trim_set(&errors, 5, &[], 4).unwrap();
        let est = trimmed_estimate(&frame, &basis, &sets).unwrap();
        let full = lbf_estimate(&frame, &basis).unwrap();
        let mut p = full.normal.matrix.clone();
        for &j in est.omega_bar() {
            let psi = regression_vector(&frame, &basis, j);
            p -= &psi * psi.adjoint();
        }
        assert!((p - &est.normal.matrix).camax() < 1e-10);

        let (mut frame, beta) = in_span_frame(&mut rng, &basis, 2);
        let mut y = frame.y().to_vec();
        y[7] += c(1e3);
        frame = Frame::new(frame.center(), 15, y, (0..31).map(|p| frame.phi(p).to_vec()).collect()).unwrap();
        let mut sets = TrimSets::full(31);
        sets.retained.retain(|&p| p != 7);
        sets.rejected.push(7);
        let est = trimmed_estimate(&frame, &basis, &sets).unwrap();
        assert!((&est.beta - &beta).camax() < 1e-8);
    }

    fn ssr(frame: &Frame, basis: &BasisSet, omega: &[usize]) -> f64 {
        let est = trimmed_estimate(frame, basis, &TrimSets { retained: omega.to_vec(), rejected: vec![] }).unwrap();
        omega.iter().map(|&p| est.residuals[p].norm_sqr()).sum()
    }

    #[test]
    fn sequential_trim_bounded_by_lts() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let basis = BasisSet::from_functions(vec![vec![1.0 / 3.0; 9]], vec![]).unwrap();
        for _ in 0..20 {
            let mut frame = random_frame(&mut rng, 4, 1);
            let mut y = frame.y().to_vec();
            y[rng.random_range(0..9)] += c(50.0);
            frame = Frame::new(4, 4, y, (0..9).map(|p| frame.phi(p).to_vec()).collect()).unwrap();
            let errors: Vec<C64> = (0..9).map(|_| cn(&mut rng)).collect();
            let sets = trim_set(&errors, 2, &[], 1).unwrap();
            let seq = ssr(&frame, &basis, &sets.retained);
            let mut best = f64::INFINITY;
            for a in 0..9 {
                for b in (a + 1)..9 {
                    let omega: Vec<usize> = (0..9).filter(|&p| p != a && p != b).collect();
                    best = best.min(ssr(&frame, &basis, &omega));
                }
            }
            assert!(seq >= best - 1e-12);
        }
    }

    #[test]
    fn noise_variance_examples() {
        let r = vec![C64::new(0.3, 0.4); 7];
        assert!((noise_variance(&r, &[0, 2, 5]) - 0.25).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let normal = rand_distr::StandardNormal;
        let s2 = 0.7;
        let r: Vec<C64> = (0..10_000)
            .map(|_| C64::new(rng.sample::<f64, _>(normal), rng.sample::<f64, _>(normal)) * (s2 / 2.0f64).sqrt())
            .collect();
        let all: Vec<usize> = (0..r.len()).collect();
        assert!((noise_variance(&r, &all) / s2 - 1.0).abs() < 0.05);

        let mut r2 = r.clone();
        r2[0] = c(1e6);
        assert_eq!(noise_variance(&r, &all[1..]), noise_variance(&r2, &all[1..]));
    }

    // Two-pass trajectory spread.
    fn theta_variance_oracle(beta: &DVector<C64>, basis: &BasisSet, n: usize) -> f64 {
        let traj = trajectory(beta, basis, n);
        let k = traj.len() as f64;
        let mean: Vec<C64> = (0..n).map(|a| traj.iter().map(|t| t[a]).sum::<C64>() / k).collect();
        traj.iter().map(|t| t.iter().zip(&mean).map(|(x, m)| (x - m).norm_sqr()).sum::<f64>()).sum::<f64>() / k
    }

    #[test]
    fn theta_variance_examples() {
        let basis = BasisSet::from_functions(vec![vec![1.0 / 21f64.sqrt(); 21]], vec![]).unwrap();
        assert!(theta_variance(&DVector::from_element(1, C64::new(2.0, -1.0)), &basis, 1) < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let basis = jakes_basis(21, 3);
        let beta = DVector::from_fn(6, |_, _| cn(&mut rng));
        let v = theta_variance(&beta, &basis, 2);
        assert!((v - theta_variance_oracle(&beta, &basis, 2)).abs() < 1e-10);
        assert!((theta_variance(&(&beta * c(3.0)), &basis, 2) - 9.0 * v).abs() < 1e-10);
        let unit = C64::from_polar(1.0, 0.7);
        assert!((theta_variance(&(&beta * unit), &basis, 2) - v).abs() < 1e-12);
    }

    #[test]
    fn phi_update_examples() {
        let phi = [C64::new(1.0, 1.0), C64::new(0.0, -2.0)];
        let target = DMatrix::from_fn(2, 2, |i, j| phi[i] * phi[j].conj());
        let mut hat = DMatrix::<C64>::identity(2, 2);
        for _ in 0..3000 {
            phi_update(&mut hat, &phi, 0.99);
        }
        assert!((&hat - &target).camax() < 1e-10);
        let mut hat = DMatrix::<C64>::identity(2, 2);
        phi_update(&mut hat, &phi, 0.0);
        assert_eq!(hat, target);

        // a single snapshot of a 100-sample forgetting window is still noisy,
        // so check the time average
        let u = crate::sim::gen_qpsk(100_000, 1);
        let mut avg = DMatrix::<C64>::zeros(3, 3);
        let mut hat = DMatrix::<C64>::identity(3, 3);
        for t in 2..u.len() {
            phi_update(&mut hat, &[u[t], u[t - 1], u[t - 2]], 0.99);
            avg += &hat;
        }
        avg /= c((u.len() - 2) as f64);
        assert!((avg - DMatrix::identity(3, 3)).camax() < 0.05);
        assert!((&hat - hat.adjoint()).camax() == 0.0);
    }

    #[test]
    fn adaptive_m_examples() {
        let model = ParameterModel::new(HyperModel::FlatDoppler, 0.2, 1.0).unwrap();
        let basis = hypermodel_basis(&model, 31, 31).unwrap();
        let eye = DMatrix::<C64>::identity(2, 2);
        let (m, _) = adaptive_m(basis.lambdas(), 0.0, 1.0, &eye, 28, 2);
        assert_eq!(m, 13);
        assert_eq!(adaptive_m(basis.lambdas(), 1.0, 0.0, &eye, 28, 2).0, 1);
        let (_, loaded) = adaptive_m(basis.lambdas(), 1.0, 1.0, &DMatrix::zeros(2, 2), 28, 2);
        assert!(loaded);
    }

    #[test]
    fn adaptive_state_policies() {
        let lambdas = vec![3.0, 1.0, 0.1];
        let mut s = AdaptiveState::new(MPolicy::Fixed(2), lambdas.clone(), 1, 0.99).unwrap();
        assert_eq!(s.next_m(30, 3), 2);
        let mut s = AdaptiveState::new(MPolicy::Adaptive, lambdas.clone(), 1, 0.99).unwrap();
        s.observe_regressor(&[c(1.0)]);
        assert_eq!(s.next_m(30, 3), 3);
        s.observe(0.5, 1.0);
        s.phi_hat = Some(DMatrix::identity(1, 1));
        assert_eq!(s.next_m(30, 3), 2);
        assert!(AdaptiveState::new(MPolicy::Adaptive, vec![], 1, 0.99).is_err());
        assert!(AdaptiveState::new(MPolicy::Fixed(1), vec![], 1, 1.0).is_err());
    }

    #[test]
    fn tracker_with_zero_trim_matches_lbf_tracker() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let basis = jakes_basis(21, 4);
        let len = 120;
        let u: Vec<C64> = (0..len).map(|_| cn(&mut rng)).collect();
        let y: Vec<C64> = (0..len).map(|_| cn(&mut rng)).collect();
        let trim = TrimConfig::from_delta(0, 21).unwrap();
        let mut a = TrimmedTracker::new(&basis, 2, trim, MPolicy::Adaptive, 0.99, InitMethod::Lad).unwrap();
        let mut b = LbfTracker::new(&basis, 2, MPolicy::Adaptive, 0.99).unwrap();
        for t in 10..len - 10 {
            let frame = Frame::from_stream(&u, &y, t, 10, 2).unwrap();
            assert_eq!(a.step(&frame).unwrap(), b.step(&frame).unwrap());
        }
    }

    #[test]
    fn tracker_rejects_isolated_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let model = ParameterModel::new(HyperModel::FlatDoppler, 0.02, 1.0).unwrap();
        let basis = hypermodel_basis(&model, 21, 2).unwrap();
        let len = 200;
        let u: Vec<C64> = (0..len).map(|_| cn(&mut rng)).collect();
        let theta = [C64::new(1.0, 0.5), C64::new(-0.3, 0.2)];
        let mut y: Vec<C64> = (0..len)
            .map(|s| {
                let phi = [u[s], if s > 0 { u[s - 1] } else { c(0.0) }];
                lbf::predict(&theta, &phi) + cn(&mut rng) * 0.01
            })
            .collect();
        for s in (15..len).step_by(17) {
            y[s] += c(50.0);
        }
        let trim = TrimConfig::from_delta(3, 21).unwrap();
        let mut tracker =
            TrimmedTracker::new(&basis, 2, trim, MPolicy::Fixed(1), 0.99, InitMethod::IteratedTrim).unwrap();
        for t in 10..len - 10 {
            let frame = Frame::from_stream(&u, &y, t, 10, 2).unwrap();
            let step = tracker.step(&frame).unwrap();
            let err: f64 = step.theta.iter().zip(&theta).map(|(a, b)| (a - b).norm_sqr()).sum();
            assert!(err < 1e-3, "t={t} err={err}");
        }
    }
}
