//! Parameter-variation hypermodels and the Karhunen-Loève basis built from
//! them, together with the closed-form bias/variance expressions that drive
//! basis-count selection.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Shape of the Doppler spectrum of the parameter trajectories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperModel {
    /// Rayleigh fading, `ρ(τ) = J₀(ω_d τ)`.
    Jakes,
    /// Band-limited flat spectrum, `ρ(τ) = sinc(ω₀ τ)`.
    FlatDoppler,
}

/// Second-order description of the parameter variation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterModel {
    pub kind: HyperModel,
    /// Maximum Doppler frequency in radians per sample.
    pub rate: f64,
    /// Total parameter power `E‖θ(t)‖²`.
    pub sigma_theta_sq: f64,
}

impl ParameterModel {
    pub fn new(kind: HyperModel, rate: f64, sigma_theta_sq: f64) -> Result<Self> {
        if !(rate > 0.0 && rate <= std::f64::consts::PI) {
            return Err(Error::InvalidArgument(format!("rate {rate} outside (0, pi]")));
        }
        if !(sigma_theta_sq > 0.0 && sigma_theta_sq.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma_theta_sq {sigma_theta_sq} must be positive")));
        }
        Ok(Self { kind, rate, sigma_theta_sq })
    }

    /// Normalized autocorrelation at lag `tau`.
    pub fn rho(&self, tau: i64) -> f64 {
        rho(self, tau)
    }
}

/// Normalized autocorrelation `ρ_θ(τ)` of the hypermodel, clipped to `[-1, 1]`.
pub fn rho(model: &ParameterModel, tau: i64) -> f64 {
    let x = model.rate * tau.unsigned_abs() as f64;
    let r = match model.kind {
        HyperModel::Jakes => libm::j0(x),
        HyperModel::FlatDoppler => {
            if x == 0.0 {
                1.0
            } else {
                x.sin() / x
            }
        }
    };
    r.clamp(-1.0, 1.0)
}

/// The `K×K` Toeplitz correlation matrix `[R]ᵢⱼ = ρ(j − i)`.
pub fn correlation_matrix(model: &ParameterModel, width: usize) -> Result<DMatrix<f64>> {
    check_width(width)?;
    let lags: Vec<f64> = (0..width).map(|tau| rho(model, tau as i64)).collect();
    Ok(DMatrix::from_fn(width, width, |i, j| lags[i.abs_diff(j)]))
}

fn check_width(width: usize) -> Result<()> {
    if width == 0 || width % 2 == 0 {
        return Err(Error::InvalidArgument(format!("window width {width} must be odd and positive")));
    }
    Ok(())
}

/// An orthonormal set of `m` real basis sequences on the window `[-k, k]`.
///
/// Sequences are stored position-indexed: position `p ∈ [0, K)` holds the
/// value at offset `j = p − k`.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisSet {
    width: usize,
    funcs: Vec<Vec<f64>>,
    // position-major copy: columns[p * m + l] = f_l(p - k)
    columns: Vec<f64>,
    lambdas: Vec<f64>,
    kernel: Vec<f64>,
    f0: Vec<f64>,
    g: Vec<f64>,
}

impl BasisSet {
    /// Builds a basis from explicit sequences. The caller is responsible for
    /// orthonormality; eigenvalues may be empty.
    pub fn from_functions(funcs: Vec<Vec<f64>>, lambdas: Vec<f64>) -> Result<Self> {
        let m = funcs.len();
        if m == 0 {
            return Err(Error::InvalidArgument("basis needs at least one function".into()));
        }
        let width = funcs[0].len();
        check_width(width)?;
        if funcs.iter().any(|f| f.len() != width) {
            return Err(Error::InvalidArgument("basis functions differ in length".into()));
        }
        if !lambdas.is_empty() && lambdas.len() != m {
            return Err(Error::InvalidArgument("one eigenvalue per function required".into()));
        }
        let k = width / 2;
        let mut columns = vec![0.0; width * m];
        for (l, f) in funcs.iter().enumerate() {
            for (p, &v) in f.iter().enumerate() {
                columns[p * m + l] = v;
            }
        }
        let f0: Vec<f64> = funcs.iter().map(|f| f[k]).collect();
        let g: Vec<f64> = funcs.iter().map(|f| f.iter().sum::<f64>() / width as f64).collect();
        let kernel = (0..width).map(|p| (0..m).map(|l| f0[l] * columns[p * m + l]).sum()).collect();
        Ok(Self { width, funcs, columns, lambdas, kernel, f0, g })
    }

    /// Window width `K = 2k + 1`.
    pub fn width(&self) -> usize {
        self.width
    }

    /// Half width `k`.
    pub fn half(&self) -> usize {
        self.width / 2
    }

    /// Number of basis functions.
    pub fn m(&self) -> usize {
        self.funcs.len()
    }

    /// Sequence `f_l` indexed by position.
    pub fn function(&self, l: usize) -> &[f64] {
        &self.funcs[l]
    }

    /// `f_l(j)` at offset `j ∈ [-k, k]`.
    pub fn value(&self, l: usize, j: i64) -> f64 {
        self.funcs[l][(j + self.half() as i64) as usize]
    }

    /// The vector `f(j)` at window position `p`.
    pub fn at(&self, p: usize) -> &[f64] {
        let m = self.m();
        &self.columns[p * m..(p + 1) * m]
    }

    /// Eigenvalues attached to the functions (empty for hand-built bases).
    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// Smoothing kernel `h(j) = fᴴ(0) f(j)`, position-indexed.
    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    /// Center values `f_l(0)`.
    pub fn f0(&self) -> &[f64] {
        &self.f0
    }

    /// Window averages `g = (1/K) Σⱼ f(j)`.
    pub fn g(&self) -> &[f64] {
        &self.g
    }

    /// The first `m` functions as a new basis.
    pub fn truncate(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.m() {
            return Err(Error::InvalidArgument(format!("cannot truncate {} functions to {m}", self.m())));
        }
        let lambdas = if self.lambdas.is_empty() { vec![] } else { self.lambdas[..m].to_vec() };
        Self::from_functions(self.funcs[..m].to_vec(), lambdas)
    }

    /// All prefixes `[truncate(1), …, truncate(m)]`.
    pub fn prefixes(&self) -> Vec<Self> {
        (1..=self.m()).map(|m| self.truncate(m).expect("valid prefix")).collect()
    }

    /// `I_n ⊗ fᴴ(j)` as an `n × nm` matrix, `j` given as a position.
    pub fn selector(&self, n: usize, p: usize) -> DMatrix<f64> {
        self.kron_rows(n, self.at(p))
    }

    /// `F₀ = I_n ⊗ fᴴ(0)`.
    pub fn f0_matrix(&self, n: usize) -> DMatrix<f64> {
        self.kron_rows(n, &self.f0)
    }

    /// `G = I_n ⊗ gᴴ`.
    pub fn g_matrix(&self, n: usize) -> DMatrix<f64> {
        self.kron_rows(n, &self.g)
    }

    fn kron_rows(&self, n: usize, row: &[f64]) -> DMatrix<f64> {
        let m = self.m();
        let mut out = DMatrix::zeros(n, n * m);
        for a in 0..n {
            for (l, &v) in row.iter().enumerate() {
                out[(a, a * m + l)] = v;
            }
        }
        out
    }
}

/// Dominant eigenvectors of a correlation matrix as basis sequences, ordered
/// by non-increasing eigenvalue. Each sequence is signed so that `f(0) ≥ 0`
/// (or, when `f(0)` vanishes, so that its first nonzero entry is positive).
pub fn eigenbasis(r: &DMatrix<f64>, m_max: usize) -> Result<BasisSet> {
    let width = r.nrows();
    check_width(width)?;
    if r.ncols() != width {
        return Err(Error::InvalidArgument("correlation matrix must be square".into()));
    }
    if m_max == 0 || m_max > width {
        return Err(Error::InvalidArgument(format!("m_max {m_max} outside [1, {width}]")));
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("non-finite matrix entry".into()));
    }
    let asym = (r - r.transpose()).amax();
    if asym > 1e-12 * r.amax().max(1.0) {
        return Err(Error::Eigen(format!("matrix is not symmetric (max deviation {asym:e})")));
    }

    let eig = SymmetricEigen::try_new(r.clone(), f64::EPSILON, 1_000_000)
        .ok_or_else(|| Error::Eigen("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..width).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let k = width / 2;
    let mut funcs: Vec<Vec<f64>> = order[..m_max]
        .iter()
        .map(|&c| {
            // [f(k), …, f(-k)]ᵀ = q, so position p holds q[K - 1 - p]
            (0..width).map(|p| eig.eigenvectors[(width - 1 - p, c)]).collect()
        })
        .collect();
    let lambdas: Vec<f64> = order[..m_max].iter().map(|&c| eig.eigenvalues[c].max(0.0)).collect();

    if !is_orthonormal(&funcs, 1e-12) {
        gram_schmidt(&mut funcs);
    }
    for f in funcs.iter_mut() {
        fix_sign(f, k);
    }
    BasisSet::from_functions(funcs, lambdas)
}

/// Basis from a hypermodel: builds `R_θ` and takes its `m_max` dominant eigenvectors.
pub fn hypermodel_basis(model: &ParameterModel, width: usize, m_max: usize) -> Result<BasisSet> {
    eigenbasis(&correlation_matrix(model, width)?, m_max)
}

fn is_orthonormal(funcs: &[Vec<f64>], tol: f64) -> bool {
    for (a, fa) in funcs.iter().enumerate() {
        for fb in &funcs[a..] {
            let d: f64 = fa.iter().zip(fb).map(|(x, y)| x * y).sum();
            let target = if std::ptr::eq(fa, fb) { 1.0 } else { 0.0 };
            if (d - target).abs() > tol {
                return false;
            }
        }
    }
    true
}

fn gram_schmidt(funcs: &mut [Vec<f64>]) {
    for a in 0..funcs.len() {
        let (done, rest) = funcs.split_at_mut(a);
        let v = &mut rest[0];
        for u in done.iter() {
            let d: f64 = u.iter().zip(v.iter()).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= d * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
    }
}

fn fix_sign(f: &mut [f64], center: usize) {
    const ZERO: f64 = 1e-12;
    let pivot =
        if f[center].abs() > ZERO { f[center] } else { f.iter().copied().find(|v| v.abs() > ZERO).unwrap_or(0.0) };
    if pivot < 0.0 {
        f.iter_mut().for_each(|v| *v = -*v);
    }
}

/// Predicted bias, variance and total MSE of the LBF estimator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MsePrediction {
    pub bias: f64,
    pub variance: f64,
    pub mse: f64,
}

/// Closed-form bias/variance decomposition for the first `m` functions of an
/// eigenbasis.
pub fn predicted_mse(
    basis: &BasisSet,
    m: usize,
    sigma_e_sq: f64,
    sigma_theta_sq: f64,
    tr_phi_inv: f64,
) -> Result<MsePrediction> {
    if m == 0 || m > basis.m() {
        return Err(Error::InvalidArgument(format!("m = {m} outside [1, {}]", basis.m())));
    }
    if basis.lambdas().len() < m {
        return Err(Error::InvalidArgument("basis carries no eigenvalues".into()));
    }
    let captured: f64 = (0..m).map(|i| basis.lambdas()[i] * basis.f0()[i].powi(2)).sum();
    let energy: f64 = basis.f0()[..m].iter().map(|v| v * v).sum();
    let bias = (sigma_theta_sq * (1.0 - captured)).max(0.0);
    let variance = sigma_e_sq * tr_phi_inv * energy;
    Ok(MsePrediction { bias, variance, mse: bias + variance })
}

/// Optimal basis count: the largest `m ∈ [1, M − 1]` whose eigenvalue exceeds
/// `σ_e² tr{Φ⁻¹} / σ_θ²`, or 1 when none does.
pub fn select_m_optimal(lambdas: &[f64], sigma_e_sq: f64, sigma_theta_sq: f64, tr_phi_inv: f64, cap: usize) -> usize {
    if !(sigma_theta_sq > 0.0) {
        return 1;
    }
    select_m_by_threshold(lambdas, sigma_e_sq * tr_phi_inv / sigma_theta_sq, cap)
}

/// Largest `m ∈ [1, cap − 1]` with `λ_m > threshold`; a non-positive
/// threshold admits every index. Returns 1 if nothing qualifies.
pub fn select_m_by_threshold(lambdas: &[f64], threshold: f64, cap: usize) -> usize {
    let top = cap.saturating_sub(1).min(lambdas.len());
    (1..=top).rev().find(|&m| threshold <= 0.0 || lambdas[m - 1] > threshold).unwrap_or(1)
}

/// Identifiability bound `M = floor(K / n)`.
pub fn identifiability_bound(width: usize, n: usize) -> usize {
    width / n.max(1)
}
