//! Exponential-family response models with canonical links.
//!
//! Three families are supported: Bernoulli with logit link, normal with
//! identity link, and Poisson with log link. The link is always canonical,
//! so `g(mu)` equals the natural parameter and the derivative of the inverse
//! link equals the variance function.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear predictors are clamped to this range before exponentiation so that
/// logit and log links saturate instead of overflowing, and so mu stays
/// strictly inside the mean domain at double precision.
pub const ETA_CLAMP: f64 = 30.0;

/// Response distribution, identified together with its canonical link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseKind {
    BernoulliLogit,
    NormalIdentity,
    PoissonLog,
}

impl ResponseKind {
    pub fn name(self) -> &'static str {
        match self {
            ResponseKind::BernoulliLogit => "bernoulli_logit",
            ResponseKind::NormalIdentity => "normal_identity",
            ResponseKind::PoissonLog => "poisson_log",
        }
    }
}

/// An exponential-family GLM description: the response kind plus the known
/// dispersion a(phi).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    kind: ResponseKind,
    dispersion: f64,
}

impl FamilySpec {
    /// Bernoulli and Poisson are one-parameter families and require
    /// dispersion exactly 1.
    pub fn new(kind: ResponseKind, dispersion: f64) -> Result<Self> {
        if !(dispersion > 0.0) || !dispersion.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "dispersion must be a positive finite real, got {dispersion}"
            )));
        }
        match kind {
            ResponseKind::BernoulliLogit | ResponseKind::PoissonLog if dispersion != 1.0 => {
                Err(Error::InvalidConfig(format!(
                    "{} requires dispersion = 1, got {dispersion}",
                    kind.name()
                )))
            }
            _ => Ok(FamilySpec { kind, dispersion }),
        }
    }

    pub fn bernoulli() -> Self {
        FamilySpec {
            kind: ResponseKind::BernoulliLogit,
            dispersion: 1.0,
        }
    }

    pub fn poisson() -> Self {
        FamilySpec {
            kind: ResponseKind::PoissonLog,
            dispersion: 1.0,
        }
    }

    pub fn normal(dispersion: f64) -> Result<Self> {
        FamilySpec::new(ResponseKind::NormalIdentity, dispersion)
    }

    pub fn kind(&self) -> ResponseKind {
        self.kind
    }

    /// The known dispersion a(phi).
    pub fn dispersion(&self) -> f64 {
        self.dispersion
    }

    /// mu = g^{-1}(eta). Saturates for |eta| > ETA_CLAMP on the logit and log
    /// links; never returns a non-finite value for finite input.
    pub fn inverse_link(&self, eta: f64) -> f64 {
        debug_assert!(eta.is_finite(), "inverse_link requires finite eta");
        match self.kind {
            ResponseKind::BernoulliLogit => sigmoid(clamp_eta(eta)),
            ResponseKind::NormalIdentity => eta,
            ResponseKind::PoissonLog => clamp_eta(eta).exp(),
        }
    }

    /// The variance function V(mu) = b''(gamma(mu)), excluding dispersion.
    pub fn variance_function(&self, mu: f64) -> Result<f64> {
        match self.kind {
            ResponseKind::BernoulliLogit => {
                if mu > 0.0 && mu < 1.0 {
                    Ok(mu * (1.0 - mu))
                } else {
                    Err(Error::Domain {
                        value: mu,
                        context: "evaluating Bernoulli variance (mu must lie in (0,1))",
                    })
                }
            }
            ResponseKind::NormalIdentity => Ok(1.0),
            ResponseKind::PoissonLog => {
                if mu > 0.0 {
                    Ok(mu)
                } else {
                    Err(Error::Domain {
                        value: mu,
                        context: "evaluating Poisson variance (mu must be positive)",
                    })
                }
            }
        }
    }

    /// V(mu) for a mean that came out of `inverse_link`, which keeps mu
    /// strictly inside the domain; shared by the fused evaluation passes so
    /// the link is exponentiated once per row.
    #[inline]
    pub(crate) fn weight_from_mean(&self, mu: f64) -> f64 {
        match self.kind {
            ResponseKind::BernoulliLogit => mu * (1.0 - mu),
            ResponseKind::NormalIdentity => 1.0,
            ResponseKind::PoissonLog => mu,
        }
    }

    /// d mu / d eta. Equals `variance_function(inverse_link(eta))` for the
    /// canonical links implemented here.
    pub fn dmean_deta(&self, eta: f64) -> f64 {
        debug_assert!(eta.is_finite(), "dmean_deta requires finite eta");
        match self.kind {
            ResponseKind::BernoulliLogit => {
                let mu = sigmoid(clamp_eta(eta));
                mu * (1.0 - mu)
            }
            ResponseKind::NormalIdentity => 1.0,
            ResponseKind::PoissonLog => clamp_eta(eta).exp(),
        }
    }

    /// Draw one response with mean `inverse_link(eta)`. Normal responses use
    /// variance equal to the dispersion.
    pub fn sample_response<R: Rng + ?Sized>(&self, eta: f64, rng: &mut R) -> f64 {
        let mu = self.inverse_link(eta);
        match self.kind {
            ResponseKind::BernoulliLogit => {
                if rng.random::<f64>() < mu {
                    1.0
                } else {
                    0.0
                }
            }
            ResponseKind::NormalIdentity => {
                let z: f64 = StandardNormal.sample(rng);
                mu + self.dispersion.sqrt() * z
            }
            ResponseKind::PoissonLog => Poisson::new(mu)
                .expect("clamped eta keeps the Poisson mean positive and finite")
                .sample(rng),
        }
    }

    /// Per-observation log likelihood up to terms constant in eta.
    pub fn log_likelihood(&self, eta: f64, y: f64) -> f64 {
        match self.kind {
            ResponseKind::BernoulliLogit => y * eta - softplus(eta),
            ResponseKind::NormalIdentity => {
                let r = y - eta;
                -0.5 * r * r / self.dispersion
            }
            ResponseKind::PoissonLog => y * clamp_eta(eta) - clamp_eta(eta).exp(),
        }
    }

    /// Same value as `log_likelihood`, reusing a mean already produced by
    /// `inverse_link(eta)` so the link is exponentiated once per row.
    #[inline]
    pub(crate) fn log_likelihood_from_mean(&self, eta: f64, mu: f64, y: f64) -> f64 {
        match self.kind {
            ResponseKind::BernoulliLogit => y * eta + (1.0 - mu).ln(),
            ResponseKind::NormalIdentity => {
                let r = y - eta;
                -0.5 * r * r / self.dispersion
            }
            ResponseKind::PoissonLog => y * clamp_eta(eta) - mu,
        }
    }

    /// Whether a response value is admissible for this family.
    pub fn valid_response(&self, y: f64) -> bool {
        if !y.is_finite() {
            return false;
        }
        match self.kind {
            ResponseKind::BernoulliLogit => y == 0.0 || y == 1.0,
            ResponseKind::NormalIdentity => true,
            ResponseKind::PoissonLog => y >= 0.0 && y.fract() == 0.0,
        }
    }
}

/// Treatment-effect structure of the linear predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorMode {
    /// eta = theta + beta * A: a single scalar effect, no covariates.
    Ate,
    /// eta = theta'X + (beta'X) * A with X carrying an intercept.
    Hte,
}

/// Dimensions of the linear predictor. Covariate vectors have length `p + 1`
/// with the first element fixed to 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearPredictorSpec {
    pub mode: PredictorMode,
    pub p: usize,
}

impl LinearPredictorSpec {
    pub fn new(mode: PredictorMode, p: usize) -> Result<Self> {
        if mode == PredictorMode::Hte && p == 0 {
            return Err(Error::InvalidConfig(
                "hte mode requires at least one covariate (p >= 1)".into(),
            ));
        }
        Ok(LinearPredictorSpec { mode, p })
    }

    /// Length of theta, beta, and each covariate row.
    pub fn dim(&self) -> usize {
        self.p + 1
    }
}

/// eta_i = theta'x + (beta'x) * A for a single covariate row (intercept
/// included in `x`). The ATE model is the p = 0 special case.
pub fn linear_predictor(theta: &[f64], beta: &[f64], x: &[f64], treated: bool) -> f64 {
    debug_assert_eq!(theta.len(), x.len());
    debug_assert_eq!(beta.len(), x.len());
    let base: f64 = theta.iter().zip(x).map(|(t, v)| t * v).sum();
    if treated {
        base + beta.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    } else {
        base
    }
}

fn clamp_eta(eta: f64) -> f64 {
    eta.clamp(-ETA_CLAMP, ETA_CLAMP)
}

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(eta)), overflow-safe.
fn softplus(eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p()
}
