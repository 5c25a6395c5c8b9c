//! Treatment- and control-arm score functions, empirical information
//! matrices, and the composite variance used by the sequential score test.
//!
//! Per-arm data is retained in full and every checkpoint recomputes the
//! snapshot from scratch at the freshly refitted control estimate; scores are
//! not accumulable as running sums because the nuisance estimate moves with
//! every batch.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::FamilySpec;
use crate::linalg::{spd_factor, symmetrized};
use crate::mle::{fit_control_mle, FitOptions};

/// Experiment arm. Control observations carry the baseline effect only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Control,
    Treatment,
}

/// One labeled observation: response, arm, and covariate row including the
/// leading intercept 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub arm: Arm,
    pub y: f64,
    pub x: Vec<f64>,
}

impl Observation {
    pub fn new(arm: Arm, y: f64, x: Vec<f64>) -> Self {
        Observation { arm, y, x }
    }
}

/// Growable column store for one arm's design matrix and responses. Rows are
/// flat row-major with the intercept in column 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmStore {
    arm: Arm,
    dim: usize,
    rows: Vec<f64>,
    ys: Vec<f64>,
}

impl ArmStore {
    pub fn new(arm: Arm, dim: usize) -> Self {
        ArmStore {
            arm,
            dim,
            rows: Vec::new(),
            ys: Vec::new(),
        }
    }

    pub fn arm(&self) -> Arm {
        self.arm
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    /// Append one row. The row must have length `dim` with x[0] == 1 and all
    /// entries finite.
    pub fn push(&mut self, x: &[f64], y: f64) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        if x[0] != 1.0 {
            return Err(Error::Domain {
                value: x[0],
                context: "covariate rows must start with the intercept 1",
            });
        }
        if x.iter().any(|v| !v.is_finite()) || !y.is_finite() {
            return Err(Error::Domain {
                value: f64::NAN,
                context: "observations must be finite",
            });
        }
        self.rows.extend_from_slice(x);
        self.ys.push(y);
        Ok(())
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn response(&self, i: usize) -> f64 {
        self.ys[i]
    }

    pub fn design(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.len(), self.dim, &self.rows)
    }

    pub fn responses(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.ys)
    }
}

/// All per-checkpoint quantities the test statistic needs: the average
/// treatment score, both empirical information matrices, the composite
/// variance, and the control fit they were evaluated at.
#[derive(Debug, Clone)]
pub struct ScoreSnapshot {
    pub n1: usize,
    pub n0: usize,
    /// Average treatment-arm score at (theta_hat, beta0).
    pub s_bar: DVector<f64>,
    /// Treatment information, averaged over n1.
    pub info1: DMatrix<f64>,
    /// Control information, averaged over n0.
    pub info0: DMatrix<f64>,
    /// info1 + info1 info0^{-1} info1, symmetrized.
    pub v_n: DMatrix<f64>,
    pub theta_hat: DVector<f64>,
    /// Whether any factorization needed the ridge guard.
    pub ridged: bool,
}

impl ScoreSnapshot {
    pub fn dim(&self) -> usize {
        self.s_bar.len()
    }
}

/// Minimum per-arm sample multiple of (p+1) before a snapshot is produced.
pub const MIN_SAMPLES_PER_DIM: usize = 5;

fn check_arm(data: &ArmStore, expected: Arm) -> Result<()> {
    if data.arm() != expected {
        return Err(Error::InvalidConfig(format!(
            "expected {:?} arm data, got {:?}",
            expected,
            data.arm()
        )));
    }
    Ok(())
}

fn check_len(data: &ArmStore, v: &DVector<f64>) -> Result<()> {
    if v.len() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            got: v.len(),
        });
    }
    Ok(())
}

/// Treatment-arm score of beta at (theta, beta0). For the canonical links
/// used here the chain-rule factor d mu / d eta cancels one variance factor,
/// leaving sum_i x_i (y_i - mu_i) / a(phi) with mu_i = g^{-1}((theta+beta0)'x_i).
pub fn score_treatment(
    family: FamilySpec,
    data: &ArmStore,
    theta: &DVector<f64>,
    beta0: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_arm(data, Arm::Treatment)?;
    check_len(data, theta)?;
    check_len(data, beta0)?;
    let coef: Vec<f64> = theta.iter().zip(beta0.iter()).map(|(t, b)| t + b).collect();
    Ok(raw_score(family, data, &coef))
}

/// Control-arm score of theta. Zero (within fit tolerance) at the control MLE.
pub fn score_control(
    family: FamilySpec,
    data: &ArmStore,
    theta: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_arm(data, Arm::Control)?;
    check_len(data, theta)?;
    Ok(raw_score(family, data, theta.as_slice()))
}

fn raw_score(family: FamilySpec, data: &ArmStore, coef: &[f64]) -> DVector<f64> {
    let d = data.dim();
    let a_phi = family.dispersion();
    let mut g = DVector::zeros(d);
    for i in 0..data.len() {
        let row = data.row(i);
        let eta: f64 = row.iter().zip(coef).map(|(x, c)| x * c).sum();
        let mu = family.inverse_link(eta);
        let w = (data.response(i) - mu) / a_phi;
        for j in 0..d {
            g[j] += row[j] * w;
        }
    }
    g
}

/// Empirical treatment information: (1/n1) sum_i V(mu_i) x_i x_i' / a(phi)
/// at (theta, beta0).
pub fn info_treatment(
    family: FamilySpec,
    data: &ArmStore,
    theta: &DVector<f64>,
    beta0: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    check_arm(data, Arm::Treatment)?;
    check_len(data, theta)?;
    check_len(data, beta0)?;
    if data.is_empty() {
        return Err(Error::InsufficientSamples {
            needed: 1,
            n1: 0,
            n0: 0,
        });
    }
    let coef: Vec<f64> = theta.iter().zip(beta0.iter()).map(|(t, b)| t + b).collect();
    Ok(raw_info(family, data, &coef))
}

/// Empirical control information: (1/n0) sum_i V(mu_i) x_i x_i' / a(phi).
pub fn info_control(
    family: FamilySpec,
    data: &ArmStore,
    theta: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    check_arm(data, Arm::Control)?;
    check_len(data, theta)?;
    if data.is_empty() {
        return Err(Error::InsufficientSamples {
            needed: 1,
            n1: 0,
            n0: 0,
        });
    }
    Ok(raw_info(family, data, theta.as_slice()))
}

fn raw_info(family: FamilySpec, data: &ArmStore, coef: &[f64]) -> DMatrix<f64> {
    raw_score_info(family, data, coef).1
}

/// Score sum and averaged information in one data pass, sharing the linear
/// predictor and mean per row.
fn raw_score_info(family: FamilySpec, data: &ArmStore, coef: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let d = data.dim();
    let n = data.len();
    let a_phi = family.dispersion();
    let mut g = DVector::zeros(d);
    let mut m = DMatrix::zeros(d, d);
    for i in 0..n {
        let row = data.row(i);
        let eta: f64 = row.iter().zip(coef).map(|(x, c)| x * c).sum();
        let mu = family.inverse_link(eta);
        let r = (data.response(i) - mu) / a_phi;
        let w = family.weight_from_mean(mu) / a_phi;
        for j in 0..d {
            let xj = row[j];
            g[j] += xj * r;
            let xw = xj * w;
            for k in j..d {
                m[(j, k)] += xw * row[k];
            }
        }
    }
    let scale = 1.0 / n as f64;
    for j in 0..d {
        for k in j..d {
            m[(j, k)] *= scale;
            m[(k, j)] = m[(j, k)];
        }
    }
    (g, m)
}

/// V = info1 + info1 info0^{-1} info1, symmetrized. `ridged` reports whether
/// the info0 factorization needed the ridge guard.
pub fn composite_v(info1: &DMatrix<f64>, info0: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    if info1.shape() != info0.shape() {
        return Err(Error::DimensionMismatch {
            expected: info1.nrows(),
            got: info0.nrows(),
        });
    }
    let factor = spd_factor(info0, "inverting the control information")?;
    let solved = factor.solve_mat(info1);
    let v = info1 + info1 * solved;
    Ok((symmetrized(&v), factor.ridged))
}

/// Fit the control arm and evaluate every quantity of the checkpoint in one
/// pass. `init` warm-starts the control fit.
pub fn snapshot(
    family: FamilySpec,
    treatment: &ArmStore,
    control: &ArmStore,
    beta0: &DVector<f64>,
    init: Option<&DVector<f64>>,
    options: &FitOptions,
) -> Result<ScoreSnapshot> {
    check_arm(treatment, Arm::Treatment)?;
    check_arm(control, Arm::Control)?;
    let d = treatment.dim();
    if control.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: control.dim(),
        });
    }
    let gate = MIN_SAMPLES_PER_DIM * d;
    let (n1, n0) = (treatment.len(), control.len());
    if n1 < gate || n0 < gate {
        return Err(Error::InsufficientSamples {
            needed: gate,
            n1,
            n0,
        });
    }

    if beta0.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: beta0.len(),
        });
    }
    let fit = fit_control_mle(family, &control.design(), &control.responses(), init, options)?;
    let theta_hat = fit.theta();
    let coef: Vec<f64> = theta_hat.iter().zip(beta0.iter()).map(|(t, b)| t + b).collect();
    let (score_sum, info1) = raw_score_info(family, treatment, &coef);
    let s_bar = score_sum / n1 as f64;
    let info0 = raw_info(family, control, theta_hat.as_slice());
    let (v_n, v_ridged) = composite_v(&info1, &info0)?;

    Ok(ScoreSnapshot {
        n1,
        n0,
        s_bar,
        info1,
        info0,
        v_n,
        theta_hat,
        ridged: fit.ridged || v_ridged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn store_from(arm: Arm, rows: &[&[f64]], ys: &[f64]) -> ArmStore {
        let mut s = ArmStore::new(arm, rows[0].len());
        for (row, &y) in rows.iter().zip(ys) {
            s.push(row, y).unwrap();
        }
        s
    }

    #[test]
    fn one_observation_bernoulli_score_by_hand() {
        let fam = FamilySpec::bernoulli();
        let t = store_from(Arm::Treatment, &[&[1.0]], &[1.0]);
        let theta = DVector::from_vec(vec![0.0]);
        let beta0 = DVector::from_vec(vec![0.0]);
        let s = score_treatment(fam, &t, &theta, &beta0).unwrap();
        assert_abs_diff_eq!(s[0], 0.5, epsilon = 1e-15);

        let c = store_from(Arm::Control, &[&[1.0]], &[1.0]);
        let s = score_control(fam, &c, &theta).unwrap();
        assert_abs_diff_eq!(s[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn normal_score_is_xt_residual() {
        let fam = FamilySpec::normal(1.0).unwrap();
        let t = store_from(Arm::Treatment, &[&[1.0, 2.0], &[1.0, -1.0]], &[3.0, 0.5]);
        let theta = DVector::from_vec(vec![0.5, 1.0]);
        let beta0 = DVector::from_vec(vec![0.0, 0.0]);
        // mu = (0.5 + 2, 0.5 - 1) = (2.5, -0.5); residuals (0.5, 1.0)
        let s = score_treatment(fam, &t, &theta, &beta0).unwrap();
        assert_abs_diff_eq!(s[0], 0.5 + 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(s[1], 2.0 * 0.5 + (-1.0) * 1.0, epsilon = 1e-14);
    }

    #[test]
    fn zero_residuals_give_zero_score() {
        let fam = FamilySpec::normal(1.0).unwrap();
        let theta = DVector::from_vec(vec![0.5, -0.25]);
        let beta0 = DVector::from_vec(vec![0.1, 0.0]);
        let rows: Vec<Vec<f64>> = vec![vec![1.0, 1.0], vec![1.0, -2.0], vec![1.0, 0.3]];
        let mut t = ArmStore::new(Arm::Treatment, 2);
        for row in &rows {
            let eta = (theta[0] + beta0[0]) * row[0] + (theta[1] + beta0[1]) * row[1];
            t.push(row, eta).unwrap();
        }
        let s = score_treatment(fam, &t, &theta, &beta0).unwrap();
        assert_abs_diff_eq!(s.amax(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn one_observation_info_by_hand() {
        let fam = FamilySpec::bernoulli();
        let t = store_from(Arm::Treatment, &[&[1.0]], &[1.0]);
        let zero = DVector::from_vec(vec![0.0]);
        let i1 = info_treatment(fam, &t, &zero, &zero).unwrap();
        assert_abs_diff_eq!(i1[(0, 0)], 0.25, epsilon = 1e-15);

        let c = store_from(Arm::Control, &[&[1.0]], &[0.0]);
        let i0 = info_control(fam, &c, &zero).unwrap();
        assert_abs_diff_eq!(i0[(0, 0)], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn normal_info_is_average_outer_product() {
        let fam = FamilySpec::normal(1.0).unwrap();
        let t = store_from(Arm::Treatment, &[&[1.0, 2.0]], &[0.0]);
        let zero = DVector::from_vec(vec![0.0, 0.0]);
        let i1 = info_treatment(fam, &t, &zero, &zero).unwrap();
        let expected = [[1.0, 2.0], [2.0, 4.0]];
        for j in 0..2 {
            for k in 0..2 {
                assert_abs_diff_eq!(i1[(j, k)], expected[j][k], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn duplicated_rows_leave_info_unchanged() {
        let fam = FamilySpec::bernoulli();
        let rows: [&[f64]; 3] = [&[1.0, 0.4], &[1.0, -1.1], &[1.0, 2.0]];
        let ys = [1.0, 0.0, 1.0];
        let single = store_from(Arm::Control, &rows, &ys);
        let doubled = store_from(
            Arm::Control,
            &[rows[0], rows[1], rows[2], rows[0], rows[1], rows[2]],
            &[ys[0], ys[1], ys[2], ys[0], ys[1], ys[2]],
        );
        let theta = DVector::from_vec(vec![0.2, -0.3]);
        let a = info_control(fam, &single, &theta).unwrap();
        let b = info_control(fam, &doubled, &theta).unwrap();
        for j in 0..2 {
            for k in 0..2 {
                assert_abs_diff_eq!(a[(j, k)], b[(j, k)], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn composite_v_doubles_equal_informations() {
        let m = DMatrix::identity(3, 3);
        let (v, ridged) = composite_v(&m, &m).unwrap();
        assert!(!ridged);
        for j in 0..3 {
            for k in 0..3 {
                let want = if j == k { 2.0 } else { 0.0 };
                assert_abs_diff_eq!(v[(j, k)], want, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn composite_v_scalar_case() {
        let i1 = DMatrix::from_element(1, 1, 0.25);
        let i0 = DMatrix::from_element(1, 1, 0.5);
        let (v, _) = composite_v(&i1, &i0).unwrap();
        assert_abs_diff_eq!(v[(0, 0)], 0.375, epsilon = 1e-15);
    }

    #[test]
    fn snapshot_has_zero_score_at_exact_fit() {
        // Normal identity with treatment responses equal to the control-arm
        // mean structure: s_bar must vanish.
        let fam = FamilySpec::normal(1.0).unwrap();
        let theta = [0.7, -0.2];
        let beta0 = DVector::from_vec(vec![0.0, 0.0]);
        let mut control = ArmStore::new(Arm::Control, 2);
        let mut treatment = ArmStore::new(Arm::Treatment, 2);
        for i in 0..12 {
            let z = (i as f64) * 0.5 - 3.0;
            let eta = theta[0] + theta[1] * z;
            control.push(&[1.0, z], eta).unwrap();
            treatment.push(&[1.0, z], eta).unwrap();
        }
        let snap = snapshot(
            fam,
            &treatment,
            &control,
            &beta0,
            None,
            &FitOptions::default(),
        )
        .unwrap();
        assert!(snap.s_bar.amax() < 1e-10, "s_bar = {:?}", snap.s_bar);
        assert_eq!(snap.n1, 12);
        assert_eq!(snap.n0, 12);
    }

    #[test]
    fn snapshot_enforces_the_sample_gate() {
        let fam = FamilySpec::bernoulli();
        let mut control = ArmStore::new(Arm::Control, 2);
        let mut treatment = ArmStore::new(Arm::Treatment, 2);
        for i in 0..9 {
            let z = i as f64 * 0.3 - 1.0;
            control.push(&[1.0, z], (i % 2) as f64).unwrap();
            treatment.push(&[1.0, z], ((i + 1) % 2) as f64).unwrap();
        }
        let err = snapshot(
            fam,
            &treatment,
            &control,
            &DVector::zeros(2),
            None,
            &FitOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InsufficientSamples { needed: 10, .. }));
    }

    #[test]
    fn unequal_arm_sizes_use_per_arm_normalization() {
        let fam = FamilySpec::normal(1.0).unwrap();
        let beta0 = DVector::from_vec(vec![0.0]);
        let mut control = ArmStore::new(Arm::Control, 1);
        let mut treatment = ArmStore::new(Arm::Treatment, 1);
        for i in 0..8 {
            control.push(&[1.0], (i % 3) as f64).unwrap();
        }
        for i in 0..6 {
            treatment.push(&[1.0], (i % 2) as f64 + 1.0).unwrap();
        }
        let snap = snapshot(
            fam,
            &treatment,
            &control,
            &beta0,
            None,
            &FitOptions::default(),
        )
        .unwrap();
        assert_eq!(snap.n1, 6);
        assert_eq!(snap.n0, 8);
        // theta_hat = control mean = (0+1+2+0+1+2+0+1)/8 = 0.875
        // s_bar = mean treatment residual = 1.5 - 0.875 = 0.625
        assert_abs_diff_eq!(snap.theta_hat[0], 0.875, epsilon = 1e-9);
        assert_abs_diff_eq!(snap.s_bar[0], 0.625, epsilon = 1e-9);
        // Normal identity: info1 = info0 = 1, v = 2.
        assert_abs_diff_eq!(snap.v_n[(0, 0)], 2.0, epsilon = 1e-12);
    }
}
