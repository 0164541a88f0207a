//! Small dense linear-algebra helpers shared by the filters.

use crate::error::{Error, Result};
use crate::util::record_matrix_inversion;
use nalgebra::{Cholesky, DMatrix};

/// Condition-number guard for innovation covariances.
pub const COND_LIMIT: f64 = 1e12;

/// Forces exact symmetry, (M + Mᵀ)/2.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Solves S·X = B for symmetric positive definite S via Cholesky.
///
/// The condition number is estimated from the squared ratio of the extreme
/// Cholesky diagonal entries; estimates above [`COND_LIMIT`] and failed
/// factorizations are both reported as a singular innovation covariance.
pub fn spd_solve(s: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    record_matrix_inversion();
    let sym = symmetrize(s);
    let chol = Cholesky::new(sym).ok_or(Error::SingularInnovationCov { cond: f64::INFINITY })?;
    let l = chol.l_dirty();
    let mut dmin = f64::INFINITY;
    let mut dmax = 0.0f64;
    for i in 0..l.nrows() {
        let d = l[(i, i)].abs();
        dmin = dmin.min(d);
        dmax = dmax.max(d);
    }
    let cond = (dmax / dmin).powi(2);
    if !cond.is_finite() || cond > COND_LIMIT {
        return Err(Error::SingularInnovationCov { cond });
    }
    Ok(chol.solve(b))
}

/// Congruence transform VᵀMV used to move covariances and Jacobians into the
/// graph frequency domain.
pub fn congruence(v: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    v.transpose() * m * v
}

/// Relative off-diagonal mass, ‖M − ddiag(M)‖₁ / trace(M). Zero for diagonal
/// matrices; used to verify emergent diagonality of propagated covariances.
pub fn offdiag_mass(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut off = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                off += m[(i, j)].abs();
            }
        }
    }
    let tr = m.trace().abs();
    if tr == 0.0 {
        off
    } else {
        off / tr
    }
}

/// Smallest eigenvalue must not be below -tol·trace for a PSD matrix.
pub fn is_psd(m: &DMatrix<f64>, tol: f64) -> bool {
    let sym = symmetrize(m);
    let min = sym.symmetric_eigen().eigenvalues.min();
    min >= -tol * m.trace().abs().max(1.0)
}
