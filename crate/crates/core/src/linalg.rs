//! Small dense helpers over `nalgebra` for Hermitian positive-definite systems.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::{Error, Result, C64};

/// Systems whose condition estimate exceeds this are rejected.
pub const COND_LIMIT: f64 = 1e12;

/// Cholesky factor of a Hermitian positive-definite matrix together with a
/// cheap condition estimate `(max Lᵢᵢ / min Lᵢᵢ)²`.
#[derive(Clone, Debug)]
pub struct HpdFactor {
    chol: Cholesky<C64, Dyn>,
    cond: f64,
}

impl HpdFactor {
    /// Factors `matrix`, failing if it is not numerically positive definite or
    /// its condition estimate exceeds [`COND_LIMIT`].
    pub fn new(matrix: DMatrix<C64>) -> Result<Self> {
        if matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::IllConditioned { cond: f64::INFINITY });
        }
        let chol = Cholesky::new(matrix).ok_or(Error::IllConditioned { cond: f64::INFINITY })?;
        let diag = chol.l_dirty().diagonal();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for d in diag.iter() {
            let v = d.re.abs();
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let cond = if lo > 0.0 { (hi / lo).powi(2) } else { f64::INFINITY };
        if !(cond <= COND_LIMIT) {
            return Err(Error::IllConditioned { cond });
        }
        Ok(Self { chol, cond })
    }

    pub fn cond(&self) -> f64 {
        self.cond
    }

    pub fn solve(&self, rhs: &DVector<C64>) -> DVector<C64> {
        self.chol.solve(rhs)
    }

    pub fn inverse(&self) -> DMatrix<C64> {
        let mut inv = self.chol.inverse();
        hermitize(&mut inv);
        inv
    }
}

/// Replaces `a` by `(a + aᴴ) / 2`.
pub fn hermitize(a: &mut DMatrix<C64>) {
    let n = a.nrows();
    for i in 0..n {
        a[(i, i)].im = 0.0;
        for j in (i + 1)..n {
            let v = (a[(i, j)] + a[(j, i)].conj()) * 0.5;
            a[(i, j)] = v;
            a[(j, i)] = v.conj();
        }
    }
}

/// `xᴴ A x` for Hermitian `A`, returned as a real number.
pub fn quad_form(a: &DMatrix<C64>, x: &DVector<C64>) -> f64 {
    let ax = a * x;
    x.dotc(&ax).re
}

/// Trace of the inverse of a Hermitian positive-definite matrix. If the
/// factorization fails, a diagonal load of `1e-8 · max(1, tr A / n)` is
/// applied and the second element of the result is `true`.
pub fn trace_inverse(a: &DMatrix<C64>) -> (f64, bool) {
    let tr_inv = |m: DMatrix<C64>| -> Option<f64> {
        let chol = Cholesky::new(m)?;
        let t: f64 = chol.inverse().diagonal().iter().map(|z| z.re).sum();
        t.is_finite().then_some(t)
    };
    if let Some(t) = tr_inv(a.clone()) {
        return (t, false);
    }
    let n = a.nrows().max(1);
    let scale = (a.diagonal().iter().map(|z| z.re).sum::<f64>() / n as f64).max(1.0);
    let loaded = a + DMatrix::<C64>::identity(n, n) * C64::new(1e-8 * scale, 0.0);
    (tr_inv(loaded).unwrap_or(f64::INFINITY), true)
}
