//! Maximum likelihood estimation of the baseline effect on the control arm.
//!
//! The fit is Newton scoring (IRLS for canonical links) with step-halving and
//! a trace-scaled ridge guard on the weighted normal equations. Streaming
//! callers warm-start each refit at the previous estimate, which keeps the
//! per-checkpoint cost at one or two iterations in steady state.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::FamilySpec;
use crate::linalg::spd_factor;

/// Convergence thresholds for the control fit.
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Converged when the max-abs score drops below this.
    pub score_tol: f64,
    pub max_step_halvings: usize,
    /// A coefficient norm beyond this is treated as divergence (e.g. perfect
    /// separation in a logistic fit).
    pub divergence_norm: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 100,
            score_tol: 1e-8,
            max_step_halvings: 20,
            divergence_norm: 1e3,
        }
    }
}

/// A converged control-arm fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControlFit {
    pub theta_hat: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Max-abs component of the score at theta_hat.
    pub max_abs_score: f64,
    /// Whether the ridge guard fired in any Newton solve.
    pub ridged: bool,
}

impl ControlFit {
    pub fn theta(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.theta_hat)
    }
}

/// Fit the control-arm GLM by maximum likelihood.
///
/// `x` is n x (p+1) with an all-ones first column; `init` warm-starts the
/// iteration. Errors are deferrable: `SingularInformation` when the weighted
/// design is rank-deficient even after the ridge guard, `NoConvergence` when
/// the iteration cap is hit or the estimate diverges.
pub fn fit_control_mle(
    family: FamilySpec,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    init: Option<&DVector<f64>>,
    options: &FitOptions,
) -> Result<ControlFit> {
    let n = x.nrows();
    let d = x.ncols();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: y.len(),
        });
    }
    if n < d {
        return Err(Error::InsufficientSamples {
            needed: d,
            n1: 0,
            n0: n,
        });
    }
    let mut theta = match init {
        Some(t) if t.len() == d => t.clone(),
        Some(t) => {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: t.len(),
            })
        }
        None => DVector::zeros(d),
    };

    let a_phi = family.dispersion();
    let mut ridged_any = false;
    let mut eval = evaluate(family, x, y, &theta, a_phi);
    let mut max_abs_score = eval.score.amax();

    for iter in 1..=options.max_iter {
        if max_abs_score <= options.score_tol {
            check_usable(family, x, &theta, iter - 1, max_abs_score, options)?;
            return Ok(ControlFit {
                theta_hat: theta.as_slice().to_vec(),
                converged: true,
                iterations: iter - 1,
                max_abs_score,
                ridged: ridged_any,
            });
        }

        let factor = spd_factor(&eval.hessian, "solving the control-arm Newton step")?;
        ridged_any |= factor.ridged;
        let step = factor.solve_vec(&eval.score);

        // Step-halving: shrink the Newton step until the likelihood does not
        // decrease. The slack absorbs summation noise near the optimum, where
        // the true improvement falls below the resolution of the total.
        let accept_slack = (1.0 + eval.loglik.abs()) * 1e-12;
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..=options.max_step_halvings {
            let candidate = &theta + scale * &step;
            let cand = evaluate(family, x, y, &candidate, a_phi);
            if cand.loglik.is_finite() && cand.loglik >= eval.loglik - accept_slack {
                theta = candidate;
                eval = cand;
                accepted = true;
                max_abs_score = eval.score.amax();
                if theta.norm() > options.divergence_norm {
                    return Err(Error::NoConvergence {
                        iterations: iter,
                        max_abs_score,
                    });
                }
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            return Err(Error::NoConvergence {
                iterations: iter,
                max_abs_score,
            });
        }
    }

    if max_abs_score <= options.score_tol {
        check_usable(family, x, &theta, options.max_iter, max_abs_score, options)?;
        return Ok(ControlFit {
            theta_hat: theta.as_slice().to_vec(),
            converged: true,
            iterations: options.max_iter,
            max_abs_score,
            ridged: ridged_any,
        });
    }
    Err(Error::NoConvergence {
        iterations: options.max_iter,
        max_abs_score,
    })
}

/// Guard against degenerate "converged" fits. A diverging coefficient norm or
/// a saturated linear predictor on a clamped link (the signature of perfect
/// separation: the likelihood flattens once eta hits the clamp, so the score
/// vanishes at a huge estimate) is reported as non-convergence.
fn check_usable(
    family: FamilySpec,
    x: &DMatrix<f64>,
    theta: &DVector<f64>,
    iterations: usize,
    max_abs_score: f64,
    options: &FitOptions,
) -> Result<()> {
    let diverged = theta.norm() > options.divergence_norm
        || (family.kind() != crate::family::ResponseKind::NormalIdentity
            && (0..x.nrows()).any(|i| row_dot(x, i, theta).abs() >= crate::family::ETA_CLAMP));
    if diverged {
        return Err(Error::NoConvergence {
            iterations,
            max_abs_score,
        });
    }
    Ok(())
}

/// Residual-variance estimate of the dispersion on a fitted control arm.
/// Diagnostic only; the testing path always uses the configured dispersion.
pub fn control_dispersion_estimate(
    family: FamilySpec,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    theta_hat: &DVector<f64>,
) -> Option<f64> {
    let n = x.nrows();
    let d = x.ncols();
    if n <= d {
        return None;
    }
    let mut rss = 0.0;
    for i in 0..n {
        let eta = x.row(i).iter().zip(theta_hat.iter()).map(|(a, b)| a * b).sum();
        let mu = family.inverse_link(eta);
        let v = family.variance_function(mu).ok()?;
        let r = y[i] - mu;
        rss += r * r / v;
    }
    Some(rss / (n - d) as f64)
}

struct Evaluation {
    loglik: f64,
    /// X' (y - mu) / a(phi), the canonical-link score.
    score: DVector<f64>,
    /// X' W X / a(phi) with W = diag(V(mu_i)).
    hessian: DMatrix<f64>,
}

/// Log likelihood, score, and expected Hessian in a single data pass; the
/// linear predictor and mean are shared across all three.
fn evaluate(
    family: FamilySpec,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    theta: &DVector<f64>,
    a_phi: f64,
) -> Evaluation {
    let d = x.ncols();
    let mut loglik = 0.0;
    let mut score = DVector::zeros(d);
    let mut hessian = DMatrix::zeros(d, d);
    for i in 0..x.nrows() {
        let eta = row_dot(x, i, theta);
        let mu = family.inverse_link(eta);
        loglik += family.log_likelihood_from_mean(eta, mu, y[i]);
        let r = (y[i] - mu) / a_phi;
        let w = family.weight_from_mean(mu) / a_phi;
        for j in 0..d {
            let xj = x[(i, j)];
            score[j] += xj * r;
            let xw = xj * w;
            for k in j..d {
                hessian[(j, k)] += xw * x[(i, k)];
            }
        }
    }
    for j in 0..d {
        for k in 0..j {
            hessian[(j, k)] = hessian[(k, j)];
        }
    }
    Evaluation {
        loglik,
        score,
        hessian,
    }
}

#[inline]
fn row_dot(x: &DMatrix<f64>, i: usize, v: &DVector<f64>) -> f64 {
    let mut acc = 0.0;
    for j in 0..x.ncols() {
        acc += x[(i, j)] * v[j];
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn ones_design(n: usize) -> DMatrix<f64> {
        DMatrix::from_element(n, 1, 1.0)
    }

    #[test]
    fn normal_intercept_only_is_sample_mean() {
        let fam = FamilySpec::normal(1.0).unwrap();
        let x = ones_design(3);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let fit = fit_control_mle(fam, &x, &y, None, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        assert_abs_diff_eq!(fit.theta_hat[0], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn bernoulli_intercept_only_is_logit_of_rate() {
        let fam = FamilySpec::bernoulli();
        let x = ones_design(100);
        let mut yv = vec![0.0; 100];
        for slot in yv.iter_mut().take(30) {
            *slot = 1.0;
        }
        let y = DVector::from_vec(yv);
        let fit = fit_control_mle(fam, &x, &y, None, &FitOptions::default()).unwrap();
        let expected = (0.3f64 / 0.7).ln();
        assert_relative_eq!(fit.theta_hat[0], expected, epsilon = 1e-8);
        assert_abs_diff_eq!(expected, -0.8473, epsilon = 5e-5);
    }

    #[test]
    fn first_order_condition_holds_at_the_fit() {
        let fam = FamilySpec::bernoulli();
        // Deterministic 40-row dataset, p = 1.
        let n = 40;
        let mut xd = Vec::with_capacity(2 * n);
        let mut yd = Vec::with_capacity(n);
        for i in 0..n {
            let z = -1.5 + 3.0 * (i as f64) / (n as f64 - 1.0);
            xd.push(1.0);
            xd.push(z);
            yd.push(if (i * 7) % 13 < 6 { 1.0 } else { 0.0 });
        }
        let x = DMatrix::from_row_slice(n, 2, &xd);
        let y = DVector::from_vec(yd);
        let fit = fit_control_mle(fam, &x, &y, None, &FitOptions::default()).unwrap();
        assert!(fit.max_abs_score <= 1e-8, "score = {}", fit.max_abs_score);
    }

    #[test]
    fn affine_shift_moves_only_the_intercept() {
        let fam = FamilySpec::normal(1.0).unwrap();
        let n = 25;
        let mut xd = Vec::new();
        let mut yd = Vec::new();
        for i in 0..n {
            let z = (i as f64) * 0.37 - 4.0;
            xd.push(1.0);
            xd.push(z);
            yd.push(0.5 + 1.2 * z + ((i * 13 % 7) as f64 - 3.0) * 0.11);
        }
        let x = DMatrix::from_row_slice(n, 2, &xd);
        let y = DVector::from_vec(yd.clone());
        let shifted = DVector::from_vec(yd.iter().map(|v| v + 9.25).collect());
        let f1 = fit_control_mle(fam, &x, &y, None, &FitOptions::default()).unwrap();
        let f2 = fit_control_mle(fam, &x, &shifted, None, &FitOptions::default()).unwrap();
        assert_abs_diff_eq!(f2.theta_hat[0] - f1.theta_hat[0], 9.25, epsilon = 1e-10);
        assert_abs_diff_eq!(f2.theta_hat[1], f1.theta_hat[1], epsilon = 1e-10);
    }

    #[test]
    fn separation_is_reported_as_no_convergence() {
        let fam = FamilySpec::bernoulli();
        let n = 20;
        let mut xd = Vec::new();
        let mut yd = Vec::new();
        for i in 0..n {
            let z = i as f64 - 9.5;
            xd.push(1.0);
            xd.push(z);
            yd.push(if z > 0.0 { 1.0 } else { 0.0 });
        }
        let x = DMatrix::from_row_slice(n, 2, &xd);
        let y = DVector::from_vec(yd);
        let err = fit_control_mle(fam, &x, &y, None, &FitOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NoConvergence { .. }), "{err}");
    }

    #[test]
    fn warm_start_converges_in_few_iterations() {
        let fam = FamilySpec::bernoulli();
        let n = 200;
        let mut xd = Vec::new();
        let mut yd = Vec::new();
        for i in 0..n {
            let z = ((i as f64) * 0.61) % 4.0 - 2.0;
            xd.push(1.0);
            xd.push(z);
            yd.push(if ((i * 31) % 17) as f64 / 17.0 < 1.0 / (1.0 + (-z).exp()) {
                1.0
            } else {
                0.0
            });
        }
        let x = DMatrix::from_row_slice(n, 2, &xd);
        let y = DVector::from_vec(yd);
        let cold = fit_control_mle(fam, &x, &y, None, &FitOptions::default()).unwrap();
        let warm = fit_control_mle(fam, &x, &y, Some(&cold.theta()), &FitOptions::default())
            .unwrap();
        assert!(warm.iterations <= 2, "iterations = {}", warm.iterations);
        for j in 0..2 {
            assert_abs_diff_eq!(warm.theta_hat[j], cold.theta_hat[j], epsilon = 1e-8);
        }
    }
}
