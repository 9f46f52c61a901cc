//! Small dense linear algebra helpers (state dimension ≤ 6, measurement dimension ≤ 2).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::{abs, lit, Real};

/// Relative eigenvalue floor used by every positive-definiteness check.
pub const PD_FLOOR: f64 = 1e-12;
/// Relative tolerance on `‖P − Pᵀ‖∞ / ‖P‖∞`.
pub const SYMMETRY_TOL: f64 = 1e-9;

fn inf_norm<T: Real>(m: &DMatrix<T>) -> T {
    m.row_iter()
        .map(|r| r.iter().fold(T::zero(), |acc, &x| acc + abs(x)))
        .fold(T::zero(), |a, b| if b > a { b } else { a })
}

pub fn is_symmetric<T: Real>(m: &DMatrix<T>) -> bool {
    if !m.is_square() {
        return false;
    }
    let diff = m - m.transpose();
    inf_norm(&diff) <= lit::<T>(SYMMETRY_TOL) * inf_norm(m)
}

pub fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * lit::<T>(0.5)
}

/// Symmetry, eigenvalue floor (`λ > 1e-12 · trace`) and a successful Cholesky factorization.
pub fn check_spd<T: Real>(m: &DMatrix<T>, what: &'static str) -> Result<()> {
    if !is_symmetric(m) || m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NotPositiveDefinite { what });
    }
    let trace = m.trace();
    if trace <= T::zero() {
        return Err(Error::NotPositiveDefinite { what });
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let floor = lit::<T>(PD_FLOOR) * trace;
    if eig.eigenvalues.iter().any(|&l| l <= floor) {
        return Err(Error::NotPositiveDefinite { what });
    }
    cholesky(m, what).map(|_| ())
}

/// Symmetric positive semi-definite up to the same relative floor.
pub fn check_psd<T: Real>(m: &DMatrix<T>, what: &'static str) -> Result<()> {
    if !is_symmetric(m) || m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NotPositiveDefinite { what });
    }
    let trace = m.trace();
    let eig = SymmetricEigen::new(symmetrize(m));
    let floor = -lit::<T>(PD_FLOOR) * abs(trace);
    if eig.eigenvalues.iter().any(|&l| l < floor) {
        return Err(Error::NotPositiveDefinite { what });
    }
    Ok(())
}

pub fn cholesky<T: Real>(m: &DMatrix<T>, what: &'static str) -> Result<Cholesky<T, Dyn>> {
    Cholesky::new(m.clone()).ok_or(Error::NotPositiveDefinite { what })
}

pub fn log_det_chol<T: Real>(chol: &Cholesky<T, Dyn>) -> T {
    let l = chol.l_dirty();
    (0..l.nrows()).fold(T::zero(), |acc, i| acc + l[(i, i)].ln()) * lit::<T>(2.0)
}

/// Lower Cholesky factor of a PSD matrix; a zero matrix maps to zero, and a singular PSD
/// matrix falls back to an eigen square root.
pub fn psd_sqrt<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return c.l();
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let sqrt_vals = eig
        .eigenvalues
        .map(|l| if l > T::zero() { l.sqrt() } else { T::zero() });
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals)
}

/// In-place lower Cholesky factor of `a` written into `l`; returns `false` when `a` is not
/// positive definite. Allocation-free counterpart of [`cholesky`] for hot loops.
pub fn cholesky_into<T: Real>(a: &DMatrix<T>, l: &mut DMatrix<T>) -> bool {
    let n = a.nrows();
    let a = a.as_slice();
    let l = l.as_mut_slice();
    // Column-major: element (i, j) lives at i + j n.
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i + j * n];
            for k in 0..j {
                sum -= l[i + k * n] * l[j + k * n];
            }
            if i == j {
                if !(sum > T::zero()) {
                    return false;
                }
                l[i + i * n] = sum.sqrt();
            } else {
                l[i + j * n] = sum / l[j + j * n];
            }
        }
        for j in (i + 1)..n {
            l[i + j * n] = T::zero();
        }
    }
    true
}

/// `ln det A` from the factor produced by [`cholesky_into`].
pub fn log_det_factor<T: Real>(l: &DMatrix<T>) -> T {
    let n = l.nrows();
    let d = l.as_slice();
    let prod = (0..n).fold(T::one(), |acc, i| acc * d[i + i * n]);
    if prod > lit::<T>(1e-30) && prod < lit::<T>(1e30) {
        lit::<T>(2.0) * prod.ln()
    } else {
        (0..n).fold(T::zero(), |acc, i| acc + d[i + i * n].ln()) * lit::<T>(2.0)
    }
}

/// `bᵀ A⁻¹ b` given the lower factor `L` of `A`, via forward substitution into `y`.
pub fn quad_form_inv<T: Real>(l: &DMatrix<T>, b: &DVector<T>, y: &mut DVector<T>) -> T {
    let n = l.nrows();
    let l = l.as_slice();
    let b = b.as_slice();
    let y = y.as_mut_slice();
    let mut acc = T::zero();
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= l[i + k * n] * y[k];
        }
        v /= l[i + i * n];
        y[i] = v;
        acc += v * v;
    }
    acc
}

/// Multivariate normal evaluated repeatedly against a fixed covariance.
#[derive(Debug, Clone)]
pub struct GaussianKernel<T: Real> {
    chol: Cholesky<T, Dyn>,
    log_norm: T,
}

impl<T: Real> GaussianKernel<T> {
    pub fn new(cov: &DMatrix<T>, what: &'static str) -> Result<Self> {
        let chol = cholesky(cov, what)?;
        let n = cov.nrows();
        let log_norm = -lit::<T>(0.5)
            * (lit::<T>(n as f64) * (T::two_pi()).ln() + log_det_chol(&chol));
        Ok(Self { chol, log_norm })
    }

    /// `ln N(d; 0, Σ)` for a residual `d`.
    pub fn log_pdf_residual(&self, d: &DVector<T>) -> T {
        let y = self
            .chol
            .l_dirty()
            .solve_lower_triangular(d)
            .expect("cholesky factor is non-singular");
        self.log_norm - lit::<T>(0.5) * y.norm_squared()
    }

    pub fn log_norm(&self) -> T {
        self.log_norm
    }

    pub fn chol(&self) -> &Cholesky<T, Dyn> {
        &self.chol
    }
}
