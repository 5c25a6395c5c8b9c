//! Small dense symmetric positive-definite helpers.
//!
//! All matrices in this crate are (p+1) x (p+1) with p at most a few dozen,
//! so dense Cholesky factorizations are used throughout. A trace-scaled ridge
//! is added once when a factorization fails, and the caller is told whether
//! the ridge was needed.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Ridge multiplier applied to the mean diagonal when a factorization fails.
pub const RIDGE_SCALE: f64 = 1e-10;

/// Result of an SPD factorization, recording whether the ridge guard fired.
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    pub ridged: bool,
}

impl SpdFactor {
    pub fn solve_vec(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    pub fn solve_mat(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(rhs)
    }

    /// log det of the factored matrix.
    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

/// Cholesky-factor a symmetric matrix, retrying once with a ridge of
/// `RIDGE_SCALE * mean(diag)` when the plain factorization fails.
pub fn spd_factor(m: &DMatrix<f64>, context: &'static str) -> Result<SpdFactor> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularInformation { context });
    }
    if let Some(chol) = Cholesky::new(m.clone()) {
        return Ok(SpdFactor {
            chol,
            ridged: false,
        });
    }
    let n = m.nrows();
    let mean_diag = m.diagonal().iter().map(|d| d.abs()).sum::<f64>() / n as f64;
    let ridge = if mean_diag > 0.0 {
        RIDGE_SCALE * mean_diag
    } else {
        RIDGE_SCALE
    };
    let mut ridged = m.clone();
    for i in 0..n {
        ridged[(i, i)] += ridge;
    }
    match Cholesky::new(ridged) {
        Some(chol) => Ok(SpdFactor { chol, ridged: true }),
        None => Err(Error::SingularInformation { context }),
    }
}

/// (M + M') / 2, forcing exact symmetry after accumulated rounding.
pub fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            out[(i, j)] = avg;
            out[(j, i)] = avg;
        }
    }
    out
}
