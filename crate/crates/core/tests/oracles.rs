//! Oracle equivalence tests: every closed-form or iterative path in the
//! library is checked against an independently coded route (hand-rolled
//! Newton, explicit dense inverses, direct density quotients, finite
//! differences).

mod common;

use common::{mvn_log_density, naive_inverse};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use seqscore_core::family::FamilySpec;
use seqscore_core::mle::{fit_control_mle, FitOptions};
use seqscore_core::score::{
    composite_v, info_control, info_treatment, score_control, score_treatment, snapshot, Arm,
    ArmStore,
};
use seqscore_core::sst::log_lambda_tilde;

/// Fixed 50-row logistic dataset used for the Newton-oracle comparison.
fn logistic_dataset() -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 50;
    let theta = [-0.4, 0.9];
    let mut xd = Vec::with_capacity(2 * n);
    let mut yd = Vec::with_capacity(n);
    for _ in 0..n {
        let z: f64 = StandardNormal.sample(&mut rng);
        let eta = theta[0] + theta[1] * z;
        let p = 1.0 / (1.0 + (-eta as f64).exp());
        let y = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
        xd.push(1.0);
        xd.push(z);
        yd.push(y);
    }
    (DMatrix::from_row_slice(n, 2, &xd), DVector::from_vec(yd))
}

/// Plain Newton iteration on the raw Bernoulli log likelihood
/// l(theta) = sum y eta - log(1 + exp(eta)), with its own sigmoid and an
/// explicitly inverted 2x2 Hessian.
fn newton_oracle(x: &DMatrix<f64>, y: &DVector<f64>) -> [f64; 2] {
    let n = x.nrows();
    let mut t = [0.0f64, 0.0];
    for _ in 0..60 {
        let mut g = [0.0f64, 0.0];
        let mut h = [[0.0f64; 2]; 2];
        for i in 0..n {
            let eta = t[0] * x[(i, 0)] + t[1] * x[(i, 1)];
            let p = if eta >= 0.0 {
                1.0 / (1.0 + (-eta).exp())
            } else {
                let e = eta.exp();
                e / (1.0 + e)
            };
            let r = y[i] - p;
            let w = p * (1.0 - p);
            for a in 0..2 {
                g[a] += x[(i, a)] * r;
                for b in 0..2 {
                    h[a][b] += w * x[(i, a)] * x[(i, b)];
                }
            }
        }
        let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        let step = [
            (h[1][1] * g[0] - h[0][1] * g[1]) / det,
            (-h[1][0] * g[0] + h[0][0] * g[1]) / det,
        ];
        t[0] += step[0];
        t[1] += step[1];
        if g[0].abs().max(g[1].abs()) < 1e-12 {
            break;
        }
    }
    t
}

#[test]
fn control_fit_matches_the_newton_oracle() {
    let (x, y) = logistic_dataset();
    let fit = fit_control_mle(FamilySpec::bernoulli(), &x, &y, None, &FitOptions::default())
        .expect("fit converges");
    let oracle = newton_oracle(&x, &y);
    for j in 0..2 {
        assert!(
            (fit.theta_hat[j] - oracle[j]).abs() <= 1e-6,
            "coordinate {j}: fit {} vs oracle {}",
            fit.theta_hat[j],
            oracle[j]
        );
    }
}

#[test]
fn composite_v_matches_a_dense_inverse_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for dim in 1..=3 {
        for _ in 0..40 {
            let i1 = common::random_spd(dim, 0.8, &mut rng);
            let i0 = common::random_spd(dim, 0.8, &mut rng);
            let (v, _) = composite_v(&i1, &i0).expect("spd inputs");
            let oracle = &i1 + &i1 * naive_inverse(&i0) * &i1;
            for r in 0..dim {
                for c in 0..dim {
                    assert!(
                        (v[(r, c)] - oracle[(r, c)]).abs()
                            <= 1e-10 * (1.0 + oracle[(r, c)].abs()),
                        "dim {dim} entry ({r},{c}): {} vs {}",
                        v[(r, c)],
                        oracle[(r, c)]
                    );
                }
            }
            // Symmetric positive semi-definite.
            let eig = v.clone().symmetric_eigen();
            assert!(eig.eigenvalues.iter().all(|&e| e >= -1e-10));
        }
    }
}

fn simulated_arms(seed: u64, n_per_arm: usize) -> (ArmStore, ArmStore) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fam = FamilySpec::bernoulli();
    let theta = [0.0, 1.0];
    let mut treatment = ArmStore::new(Arm::Treatment, 2);
    let mut control = ArmStore::new(Arm::Control, 2);
    for _ in 0..n_per_arm {
        for arm in [Arm::Treatment, Arm::Control] {
            let z: f64 = StandardNormal.sample(&mut rng);
            let eta = theta[0] + theta[1] * z;
            let y = fam.sample_response(eta, &mut rng);
            match arm {
                Arm::Treatment => treatment.push(&[1.0, z], y).unwrap(),
                Arm::Control => control.push(&[1.0, z], y).unwrap(),
            }
        }
    }
    (treatment, control)
}

/// Recompute s_bar from scratch with direct formula evaluation (own sigmoid,
/// own sums) at the snapshot's own theta_hat.
#[test]
fn snapshot_score_matches_a_from_scratch_recomputation() {
    let (treatment, control) = simulated_arms(99, 200);
    let beta0 = DVector::zeros(2);
    let snap = snapshot(
        FamilySpec::bernoulli(),
        &treatment,
        &control,
        &beta0,
        None,
        &FitOptions::default(),
    )
    .expect("snapshot");

    let t = snap.theta_hat.clone();
    let mut s = [0.0f64; 2];
    for i in 0..treatment.len() {
        let row = treatment.row(i);
        let eta = t[0] * row[0] + t[1] * row[1];
        let p = 1.0 / (1.0 + (-eta).exp());
        let r = treatment.response(i) - p;
        s[0] += row[0] * r;
        s[1] += row[1] * r;
    }
    let n1 = treatment.len() as f64;
    for j in 0..2 {
        assert!(
            (snap.s_bar[j] - s[j] / n1).abs() <= 1e-12,
            "s_bar[{j}] {} vs oracle {}",
            snap.s_bar[j],
            s[j] / n1
        );
    }
}

/// -(1/n) d score / d theta must equal the information matrix, for both arms
/// and every family, checked with central finite differences.
#[test]
fn information_matches_score_jacobian() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let families = [
        FamilySpec::bernoulli(),
        FamilySpec::normal(1.4).unwrap(),
        FamilySpec::poisson(),
    ];
    for fam in families {
        let n = 30;
        let mut treatment = ArmStore::new(Arm::Treatment, 2);
        let mut control = ArmStore::new(Arm::Control, 2);
        for _ in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            let eta = 0.1 + 0.4 * z;
            treatment
                .push(&[1.0, z], fam.sample_response(eta, &mut rng))
                .unwrap();
            control
                .push(&[1.0, z], fam.sample_response(eta, &mut rng))
                .unwrap();
        }
        let theta = DVector::from_vec(vec![0.15, 0.3]);
        let beta0 = DVector::from_vec(vec![0.05, -0.1]);
        let h = 1e-5;

        // Treatment pair: info1 = -(1/n) d score / d theta at fixed beta0.
        let info1 = info_treatment(fam, &treatment, &theta, &beta0).unwrap();
        for k in 0..2 {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[k] += h;
            tm[k] -= h;
            let sp = score_treatment(fam, &treatment, &tp, &beta0).unwrap();
            let sm = score_treatment(fam, &treatment, &tm, &beta0).unwrap();
            for j in 0..2 {
                let deriv = (sp[j] - sm[j]) / (2.0 * h);
                assert!(
                    (-deriv / n as f64 - info1[(j, k)]).abs() <= 1e-5,
                    "{} treatment info ({j},{k}): {} vs {}",
                    fam.kind().name(),
                    -deriv / n as f64,
                    info1[(j, k)]
                );
            }
        }

        // Control pair.
        let info0 = info_control(fam, &control, &theta).unwrap();
        for k in 0..2 {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[k] += h;
            tm[k] -= h;
            let sp = score_control(fam, &control, &tp).unwrap();
            let sm = score_control(fam, &control, &tm).unwrap();
            for j in 0..2 {
                let deriv = (sp[j] - sm[j]) / (2.0 * h);
                assert!(
                    (-deriv / n as f64 - info0[(j, k)]).abs() <= 1e-5,
                    "{} control info ({j},{k})",
                    fam.kind().name()
                );
            }
        }
    }
}

/// The empirical ratio must equal the literal quotient of the two
/// multivariate normal densities, evaluated with independent density code.
#[test]
fn lambda_matches_the_density_quotient_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..50 {
        let dim = 2;
        let info1 = common::random_spd(dim, 0.6, &mut rng);
        let info0 = common::random_spd(dim, 0.6, &mut rng);
        let (v_n, _) = composite_v(&info1, &info0).unwrap();
        let n1 = 120usize;
        let s_bar = DVector::from_fn(dim, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * 0.05
        });
        let snap = seqscore_core::score::ScoreSnapshot {
            n1,
            n0: n1,
            s_bar: s_bar.clone(),
            info1: info1.clone(),
            info0,
            v_n: v_n.clone(),
            theta_hat: DVector::zeros(dim),
            ridged: false,
        };
        let beta0 = DVector::from_vec(vec![0.1, -0.2]);
        let beta = DVector::from_vec(vec![0.25, 0.05]);

        let log_l = log_lambda_tilde(&snap, &beta, &beta0).unwrap();

        let sigma = &v_n / n1 as f64;
        let mean_alt = &info1 * (&beta - &beta0);
        let log_oracle = mvn_log_density(&s_bar, &mean_alt, &sigma)
            - mvn_log_density(&s_bar, &DVector::zeros(dim), &sigma);

        assert!(
            (log_l - log_oracle).abs() <= 1e-10 * (1.0 + log_oracle.abs()),
            "log lambda {log_l} vs density quotient {log_oracle}"
        );
    }
}
