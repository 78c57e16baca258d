//! Analysis frames and the plain (non-robust) LBF estimator.
//!
//! Generalized regression vectors use a parameter-major layout: entry
//! `a·m + l` of `ψ(t, j)` is `φ_a(t+j) · f_l(j)`.

use nalgebra::{DMatrix, DVector};

use crate::basis::BasisSet;
use crate::linalg::HpdFactor;
use crate::robust::{self, AdaptiveState};
use crate::tracking::{MPolicy, Step, Tracker};
use crate::{Error, Result, C64};

/// One analysis window of width `K = 2k + 1` centered at `t`.
///
/// Positions `p ∈ [0, K)` map to offsets `j = p − k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    center: usize,
    half: usize,
    order: usize,
    y: Vec<C64>,
    // phi[p * order + a] = u(t + j - a)
    phi: Vec<C64>,
}

impl Frame {
    /// Builds a frame from explicit outputs and regression vectors
    /// (`phi[p]` is `φ(t + p − k)`).
    pub fn new(center: usize, half: usize, y: Vec<C64>, phi: Vec<Vec<C64>>) -> Result<Self> {
        let width = 2 * half + 1;
        if y.len() != width || phi.len() != width {
            return Err(Error::InvalidArgument(format!(
                "frame needs {width} outputs and regressors, got {} and {}",
                y.len(),
                phi.len()
            )));
        }
        let order = phi[0].len();
        if order == 0 || phi.iter().any(|v| v.len() != order) {
            return Err(Error::InvalidArgument("regression vectors differ in length".into()));
        }
        Ok(Self { center, half, order, y, phi: phi.concat() })
    }

    /// Cuts the window centered at `t` out of an input/output stream. Inputs
    /// before the start of the stream are taken as zero.
    pub fn from_stream(u: &[C64], y: &[C64], t: usize, half: usize, order: usize) -> Result<Self> {
        if u.len() != y.len() {
            return Err(Error::InvalidArgument("input and output streams differ in length".into()));
        }
        if order == 0 {
            return Err(Error::InvalidArgument("FIR order must be positive".into()));
        }
        if t < half || t + half >= y.len() {
            return Err(Error::InvalidArgument(format!(
                "window centered at {t} with half width {half} leaves the stream of length {}",
                y.len()
            )));
        }
        let width = 2 * half + 1;
        let start = t - half;
        let mut phi = Vec::with_capacity(width * order);
        for s in start..start + width {
            for a in 0..order {
                phi.push(if s >= a { u[s - a] } else { C64::new(0.0, 0.0) });
            }
        }
        Ok(Self { center: t, half, order, y: y[start..start + width].to_vec(), phi })
    }

    pub fn center(&self) -> usize {
        self.center
    }

    pub fn half(&self) -> usize {
        self.half
    }

    pub fn width(&self) -> usize {
        2 * self.half + 1
    }

    /// FIR order `n`.
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn y(&self) -> &[C64] {
        &self.y
    }

    /// `φ(t + p − k)`.
    pub fn phi(&self, p: usize) -> &[C64] {
        &self.phi[p * self.order..(p + 1) * self.order]
    }

    /// All window positions `0..K`.
    pub fn positions(&self) -> Vec<usize> {
        (0..self.width()).collect()
    }

    fn check_basis(&self, basis: &BasisSet) -> Result<()> {
        if basis.width() != self.width() {
            return Err(Error::InvalidArgument(format!(
                "basis width {} does not match frame width {}",
                basis.width(),
                self.width()
            )));
        }
        Ok(())
    }
}

/// `ψ(t, j) = φ(t+j) ⊗ f(j)` at position `p`.
pub fn regression_vector(frame: &Frame, basis: &BasisSet, p: usize) -> DVector<C64> {
    let m = basis.m();
    let f = basis.at(p);
    let phi = frame.phi(p);
    DVector::from_fn(frame.order() * m, |i, _| phi[i / m] * f[i % m])
}

/// All `K` generalized regression vectors as the columns of an `mn × K` matrix.
pub fn regression_vectors(frame: &Frame, basis: &BasisSet) -> Result<DMatrix<C64>> {
    frame.check_basis(basis)?;
    let cols: Vec<_> = (0..frame.width()).map(|p| regression_vector(frame, basis, p)).collect();
    Ok(DMatrix::from_columns(&cols))
}

/// The pair `(P, p)` with `P = Σ ψψᴴ` and `p = Σ y* ψ` over a set of positions.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalEquations {
    pub matrix: DMatrix<C64>,
    pub rhs: DVector<C64>,
}

/// Normal equations restricted to the retained positions `omega`.
pub fn normal_equations(frame: &Frame, basis: &BasisSet, omega: &[usize]) -> Result<NormalEquations> {
    frame.check_basis(basis)?;
    let required = frame.order() * basis.m();
    if omega.len() < required {
        return Err(Error::Identifiability { retained: omega.len(), required });
    }
    if let Some(&p) = omega.iter().find(|&&p| p >= frame.width()) {
        return Err(Error::InvalidArgument(format!("position {p} outside the window")));
    }
    Ok(accumulate(frame, basis, omega, None))
}

/// Weighted normal equations `Σ w ψψᴴ`, `Σ w y* ψ`.
///
/// Uses `ψψᴴ = (φφᴴ) ⊗ (f fᵀ)` with a real basis: every block `(a, b)` of
/// `P` is `Σ_p φ_a φ_b* · f(p) f(p)ᵀ`, which reduces to two real matrix
/// products over the upper-triangular tap pairs.
pub(crate) fn accumulate(
    frame: &Frame,
    basis: &BasisSet,
    positions: &[usize],
    weights: Option<&[f64]>,
) -> NormalEquations {
    let n = frame.order();
    let m = basis.m();
    let q = positions.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a..n).map(move |b| (a, b))).collect();

    let mut prod_re = DMatrix::<f64>::zeros(pairs.len(), q);
    let mut prod_im = DMatrix::<f64>::zeros(pairs.len(), q);
    let mut out_re = DMatrix::<f64>::zeros(n, q);
    let mut out_im = DMatrix::<f64>::zeros(n, q);
    let mut fw = DMatrix::<f64>::zeros(q, m * m);
    let mut fv = DMatrix::<f64>::zeros(q, m);

    for (c, &p) in positions.iter().enumerate() {
        let phi = frame.phi(p);
        for (r, &(a, b)) in pairs.iter().enumerate() {
            let z = phi[a] * phi[b].conj();
            prod_re[(r, c)] = z.re;
            prod_im[(r, c)] = z.im;
        }
        let yc = frame.y()[p].conj();
        for a in 0..n {
            let z = yc * phi[a];
            out_re[(a, c)] = z.re;
            out_im[(a, c)] = z.im;
        }
        let w = weights.map_or(1.0, |w| w[c]);
        let f = basis.at(p);
        for l in 0..m {
            let wf = w * f[l];
            fv[(c, l)] = wf;
            for l2 in 0..m {
                fw[(c, l * m + l2)] = wf * f[l2];
            }
        }
    }

    let block_re = &prod_re * &fw;
    let block_im = &prod_im * &fw;
    let rhs_re = &out_re * &fv;
    let rhs_im = &out_im * &fv;

    let dim = n * m;
    let mut matrix = DMatrix::<C64>::zeros(dim, dim);
    for (r, &(a, b)) in pairs.iter().enumerate() {
        for l in 0..m {
            for l2 in 0..m {
                let v = C64::new(block_re[(r, l * m + l2)], block_im[(r, l * m + l2)]);
                matrix[(a * m + l, b * m + l2)] = v;
                if a != b {
                    matrix[(b * m + l2, a * m + l)] = v.conj();
                }
            }
        }
    }
    let rhs = DVector::from_fn(dim, |i, _| C64::new(rhs_re[(i / m, i % m)], rhs_im[(i / m, i % m)]));
    NormalEquations { matrix, rhs }
}

/// Factors `P` and solves `P β = p`.
pub(crate) fn solve_normal(ne: &NormalEquations) -> Result<(HpdFactor, DVector<C64>)> {
    let factor = HpdFactor::new(ne.matrix.clone())?;
    let beta = factor.solve(&ne.rhs);
    Ok((factor, beta))
}

/// Estimated trajectory `θ̂(t+j|t) = F(j) β`, one `n`-vector per position.
pub fn trajectory(beta: &DVector<C64>, basis: &BasisSet, n: usize) -> Vec<Vec<C64>> {
    (0..basis.width()).map(|p| theta_at(beta, basis, n, p)).collect()
}

/// `F(j) β` at position `p`.
pub fn theta_at(beta: &DVector<C64>, basis: &BasisSet, n: usize, p: usize) -> Vec<C64> {
    let m = basis.m();
    let f = basis.at(p);
    (0..n).map(|a| (0..m).map(|l| beta[a * m + l] * f[l]).sum()).collect()
}

/// Center estimate `θ̂ = F₀ β`.
pub fn theta_center(beta: &DVector<C64>, basis: &BasisSet, n: usize) -> Vec<C64> {
    theta_at(beta, basis, n, basis.half())
}

/// In-window residuals `y(t+j) − βᴴ ψ(t, j)` for every position.
pub fn residuals(frame: &Frame, basis: &BasisSet, beta: &DVector<C64>) -> Vec<C64> {
    let n = frame.order();
    (0..frame.width())
        .map(|p| {
            let theta = theta_at(beta, basis, n, p);
            frame.y()[p] - predict(&theta, frame.phi(p))
        })
        .collect()
}

/// `θᴴ φ`.
pub(crate) fn predict(theta: &[C64], phi: &[C64]) -> C64 {
    theta.iter().zip(phi).map(|(t, x)| t.conj() * x).sum()
}

/// Result of a plain LBF fit.
#[derive(Clone, Debug)]
pub struct LbfEstimate {
    pub beta: DVector<C64>,
    pub theta: Vec<C64>,
    pub normal: NormalEquations,
    /// The normal matrix could not be factored within the condition limit;
    /// `beta` and `theta` are zero and must not be used.
    pub cond_flag: bool,
}

/// Least-squares LBF fit over the whole window.
pub fn lbf_estimate(frame: &Frame, basis: &BasisSet) -> Result<LbfEstimate> {
    let normal = normal_equations(frame, basis, &frame.positions())?;
    let dim = normal.rhs.len();
    let n = frame.order();
    Ok(match solve_normal(&normal) {
        Ok((_, beta)) => {
            let theta = theta_center(&beta, basis, n);
            LbfEstimate { beta, theta, normal, cond_flag: false }
        }
        Err(Error::IllConditioned { .. }) => {
            LbfEstimate { beta: DVector::zeros(dim), theta: vec![C64::new(0.0, 0.0); n], normal, cond_flag: true }
        }
        Err(e) => return Err(e),
    })
}

/// Sliding-window plain LBF estimator with a basis-count policy. The
/// adaptive policy estimates the noise variance from all `K` residuals.
pub struct LbfTracker {
    bases: Vec<BasisSet>,
    state: AdaptiveState,
    last: Option<Vec<C64>>,
}

impl LbfTracker {
    /// `basis` supplies the largest admissible prefix; `order` is the FIR order.
    pub fn new(basis: &BasisSet, order: usize, policy: MPolicy, eta0: f64) -> Result<Self> {
        let state = AdaptiveState::new(policy, basis.lambdas().to_vec(), order, eta0)?;
        Ok(Self { bases: basis.prefixes(), state, last: None })
    }

    pub fn state(&self) -> &AdaptiveState {
        &self.state
    }
}

impl Tracker for LbfTracker {
    fn step(&mut self, frame: &Frame) -> Result<Step> {
        let n = frame.order();
        self.state.prime(frame);
        let m = self.state.next_m(frame.width(), self.bases.len());
        let basis = &self.bases[m - 1];
        let est = lbf_estimate(frame, basis)?;
        if est.cond_flag {
            let theta = self.last.clone().ok_or(Error::IllConditioned { cond: f64::INFINITY })?;
            self.state.observe_regressor(frame.phi(frame.half()));
            return Ok(Step { theta, m, delta: 0, degraded: true });
        }
        let res = residuals(frame, basis, &est.beta);
        let sigma_e_sq = robust::noise_variance(&res, &frame.positions());
        let sigma_theta_sq = robust::theta_variance(&est.beta, basis, n);
        self.state.observe(sigma_e_sq, sigma_theta_sq);
        self.state.observe_regressor(frame.phi(frame.half()));
        self.last = Some(est.theta.clone());
        Ok(Step { theta: est.theta, m, delta: 0, degraded: false })
    }
}
