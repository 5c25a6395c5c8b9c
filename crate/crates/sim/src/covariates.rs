//! Covariate generators. Every scheme emits rows of length p + 1 with the
//! first entry fixed to 1 for the intercept.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// The covariate distributions used by the harness. The low-dimensional
/// schemes carry one or two covariates; `highdim20` carries twenty drawn from
/// a fixed grid of normal, uniform, and Bernoulli components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateScheme {
    /// One N(0, 1) covariate.
    StdNormal,
    /// One U[-1, 1] covariate.
    UniformPm1,
    /// One Bernoulli(0.5) covariate.
    BernoulliHalf,
    /// Two jointly normal covariates, mean zero, unit variances,
    /// correlation 0.5.
    MvnCorr,
    /// Independent N(0, 1) and U[-1, 1].
    HybridNormalUniform,
    /// Twenty covariates: 7 normal with means evenly spaced in [-0.3, 0.3]
    /// and variance 1; 8 uniform with mean 0 and half-widths evenly spaced in
    /// [0.3, 1]; 5 Bernoulli with success probabilities evenly spaced in
    /// [0.1, 0.5].
    Highdim20,
}

impl CovariateScheme {
    /// Number of covariates excluding the intercept.
    pub fn p(&self) -> usize {
        match self {
            CovariateScheme::StdNormal
            | CovariateScheme::UniformPm1
            | CovariateScheme::BernoulliHalf => 1,
            CovariateScheme::MvnCorr | CovariateScheme::HybridNormalUniform => 2,
            CovariateScheme::Highdim20 => 20,
        }
    }

    /// Row length including the intercept.
    pub fn dim(&self) -> usize {
        self.p() + 1
    }

    /// Overwrite `row` (length dim, row[0] stays 1) with a fresh draw.
    pub fn fill_row<R: Rng + ?Sized>(&self, row: &mut [f64], rng: &mut R) {
        debug_assert_eq!(row.len(), self.dim());
        row[0] = 1.0;
        match self {
            CovariateScheme::StdNormal => {
                row[1] = StandardNormal.sample(rng);
            }
            CovariateScheme::UniformPm1 => {
                row[1] = rng.random_range(-1.0..=1.0);
            }
            CovariateScheme::BernoulliHalf => {
                row[1] = if rng.random::<bool>() { 1.0 } else { 0.0 };
            }
            CovariateScheme::MvnCorr => {
                // Lower-triangular factor of [[1, 0.5], [0.5, 1]].
                let z1: f64 = StandardNormal.sample(rng);
                let z2: f64 = StandardNormal.sample(rng);
                row[1] = z1;
                row[2] = 0.5 * z1 + (0.75f64).sqrt() * z2;
            }
            CovariateScheme::HybridNormalUniform => {
                row[1] = StandardNormal.sample(rng);
                row[2] = rng.random_range(-1.0..=1.0);
            }
            CovariateScheme::Highdim20 => {
                for (k, slot) in row.iter_mut().skip(1).take(7).enumerate() {
                    let mean = -0.3 + 0.1 * k as f64;
                    let z: f64 = StandardNormal.sample(rng);
                    *slot = mean + z;
                }
                for (k, slot) in row.iter_mut().skip(8).take(8).enumerate() {
                    let half_width = 0.3 + 0.1 * k as f64;
                    *slot = rng.random_range(-half_width..=half_width);
                }
                for (k, slot) in row.iter_mut().skip(16).take(5).enumerate() {
                    let prob = 0.1 + 0.1 * k as f64;
                    *slot = if rng.random::<f64>() < prob { 1.0 } else { 0.0 };
                }
            }
        }
    }

    pub fn sample_row<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut row = vec![1.0; self.dim()];
        self.fill_row(&mut row, rng);
        row
    }
}

/// n rows of covariates, flattened row-major, first column all ones.
pub fn generate_covariates<R: Rng + ?Sized>(
    scheme: CovariateScheme,
    n: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    (0..n).map(|_| scheme.sample_row(rng)).collect()
}
