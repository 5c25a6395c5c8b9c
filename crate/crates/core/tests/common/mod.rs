//! Shared oracle helpers for the integration tests. Everything here is
//! written from scratch against textbook formulas (Gauss-Jordan inverses,
//! Golub-Welsch quadrature nodes, direct density evaluation) and shares no
//! code with the library paths it is used to check.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Dense inverse by Gauss-Jordan elimination with partial pivoting.
pub fn naive_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    assert_eq!(n, m.ncols());
    let mut a = m.clone();
    let mut inv = DMatrix::<f64>::identity(n, n);
    for col in 0..n {
        let mut pivot = col;
        for r in (col + 1)..n {
            if a[(r, col)].abs() > a[(pivot, col)].abs() {
                pivot = r;
            }
        }
        assert!(a[(pivot, col)].abs() > 1e-300, "singular matrix in oracle");
        if pivot != col {
            a.swap_rows(pivot, col);
            inv.swap_rows(pivot, col);
        }
        let d = a[(col, col)];
        for j in 0..n {
            a[(col, j)] /= d;
            inv[(col, j)] /= d;
        }
        for r in 0..n {
            if r != col {
                let f = a[(r, col)];
                if f != 0.0 {
                    for j in 0..n {
                        a[(r, j)] -= f * a[(col, j)];
                        inv[(r, j)] -= f * inv[(col, j)];
                    }
                }
            }
        }
    }
    inv
}

/// Determinant by LU elimination (no pivot scaling games; fine for the small
/// well-conditioned matrices used in tests).
pub fn naive_det(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut a = m.clone();
    let mut det = 1.0;
    for col in 0..n {
        let mut pivot = col;
        for r in (col + 1)..n {
            if a[(r, col)].abs() > a[(pivot, col)].abs() {
                pivot = r;
            }
        }
        if a[(pivot, col)].abs() < 1e-300 {
            return 0.0;
        }
        if pivot != col {
            a.swap_rows(pivot, col);
            det = -det;
        }
        det *= a[(col, col)];
        for r in (col + 1)..n {
            let f = a[(r, col)] / a[(col, col)];
            for j in col..n {
                a[(r, j)] -= f * a[(col, j)];
            }
        }
    }
    det
}

/// Lower-triangular Cholesky factor, straight from the textbook recursion.
pub fn naive_cholesky(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = m[(i, j)];
            for k in 0..j {
                sum -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                assert!(sum > 0.0, "matrix not positive definite in oracle");
                l[(i, j)] = sum.sqrt();
            } else {
                l[(i, j)] = sum / l[(j, j)];
            }
        }
    }
    l
}

/// log of the multivariate normal density at `x`, evaluated the direct way
/// from an explicit inverse and determinant.
pub fn mvn_log_density(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let d = x.len() as f64;
    let inv = naive_inverse(cov);
    let det = naive_det(cov);
    let diff = x - mean;
    let quad = (inv * &diff).dot(&diff);
    -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + det.ln() + quad)
}

/// Gauss-Hermite nodes and weights for weight exp(-x^2), via the
/// Golub-Welsch eigen decomposition of the Jacobi matrix.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let off = (k as f64 / 2.0).sqrt();
        j[(k - 1, k)] = off;
        j[(k, k - 1)] = off;
    }
    let eig = j.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let node = eig.eigenvalues[i];
            let v0 = eig.eigenvectors[(0, i)];
            let weight = std::f64::consts::PI.sqrt() * v0 * v0;
            (node, weight)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// log(sum(exp(terms))) without overflow.
pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Multi-index iteration over a tensor grid of size `nodes^dim`.
pub fn tensor_indices(dim: usize, nodes: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(nodes.pow(dim as u32));
    let mut idx = vec![0usize; dim];
    loop {
        out.push(idx.clone());
        let mut k = 0;
        loop {
            idx[k] += 1;
            if idx[k] < nodes {
                break;
            }
            idx[k] = 0;
            k += 1;
            if k == dim {
                return out;
            }
        }
    }
}

/// Adaptive tensor Gauss-Hermite evaluation of
/// log integral f(u) N(u; 0, tau^2 I) du, where `log_f` is supplied
/// pointwise. The rule is centered at `center` with squared scale matrix
/// `shape_cov` (the approximate covariance of the integrand); correctness
/// does not depend on the centering being right, only convergence speed does.
pub fn log_gh_integral<F>(
    log_f: F,
    tau: f64,
    center: &DVector<f64>,
    shape_cov: &DMatrix<f64>,
    nodes: usize,
) -> f64
where
    F: Fn(&DVector<f64>) -> f64,
{
    let d = center.len();
    let l = naive_cholesky(shape_cov);
    let (xs, ws) = gauss_hermite(nodes);
    let log_det_l: f64 = (0..d).map(|i| l[(i, i)].ln()).sum();
    let prior_cov = DMatrix::<f64>::identity(d, d) * (tau * tau);
    let prior_mean = DVector::<f64>::zeros(d);

    let mut terms = Vec::with_capacity(xs.len().pow(d as u32));
    for idx in tensor_indices(d, nodes) {
        let z = DVector::<f64>::from_iterator(d, idx.iter().map(|&i| xs[i]));
        let u = center + std::f64::consts::SQRT_2 * (&l * &z);
        let log_w: f64 = idx.iter().map(|&i| ws[i].ln()).sum();
        let log_prior = mvn_log_density(&u, &prior_mean, &prior_cov);
        terms.push(log_w + log_f(&u) + log_prior + z.norm_squared());
    }
    log_sum_exp(&terms) + (d as f64) * 0.5 * std::f64::consts::LN_2 + log_det_l
}

/// Random SPD matrix R'R + eps I with entries on a controllable scale.
pub fn random_spd<R: Rng>(dim: usize, scale: f64, rng: &mut R) -> DMatrix<f64> {
    let r = DMatrix::<f64>::from_fn(dim, dim, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z * scale
    });
    let mut m = &r.transpose() * &r;
    for i in 0..dim {
        m[(i, i)] += 0.05 * scale * scale;
    }
    m
}
