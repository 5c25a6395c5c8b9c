//! Experiment configurations and their structured-text (TOML) form.

use serde::{Deserialize, Serialize};

use seqscore_core::error::{Error, Result};
use seqscore_core::family::{FamilySpec, ResponseKind};

use crate::covariates::CovariateScheme;

/// Which engine the harness runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sst,
    Msprt,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Sst => "sst",
            Method::Msprt => "msprt",
        }
    }
}

fn default_batch() -> usize {
    200
}

fn default_cap_n() -> usize {
    10_000
}

/// Generator plus test configuration for one simulated experiment. The field
/// set matches the `simulate` config file schema exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub family: ResponseKind,
    pub scheme: CovariateScheme,
    pub theta0: Vec<f64>,
    pub beta_true: Vec<f64>,
    pub beta0: Vec<f64>,
    pub alpha: f64,
    pub tau: f64,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_cap_n")]
    pub cap_n: usize,
    pub replications: usize,
    pub seed: u64,
    pub method: Method,
}

impl ExperimentConfig {
    pub fn dim(&self) -> usize {
        self.scheme.dim()
    }

    /// The response family with its dispersion; the dispersion is a separate
    /// knob because only normal responses admit one.
    pub fn family_spec(&self, dispersion: f64) -> Result<FamilySpec> {
        match self.family {
            ResponseKind::NormalIdentity => FamilySpec::normal(dispersion),
            ResponseKind::BernoulliLogit => FamilySpec::new(self.family, dispersion),
            ResponseKind::PoissonLog => FamilySpec::new(self.family, dispersion),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        for (name, v) in [
            ("theta0", &self.theta0),
            ("beta_true", &self.beta_true),
            ("beta0", &self.beta0),
        ] {
            if v.len() != d {
                return Err(Error::InvalidConfig(format!(
                    "{name} has length {}, scheme {:?} needs {d}",
                    v.len(),
                    self.scheme
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be finite")));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie strictly inside (0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.tau >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "tau must be non-negative, got {}",
                self.tau
            )));
        }
        if self.batch < 2 || self.batch % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "batch must be even and at least 2 so both arms fill equally, got {}",
                self.batch
            )));
        }
        if self.cap_n < self.batch / 2 {
            return Err(Error::InvalidConfig(format!(
                "cap_n ({}) is below one per-arm batch ({})",
                self.cap_n,
                self.batch / 2
            )));
        }
        if self.replications == 0 {
            return Err(Error::InvalidConfig("replications must be at least 1".into()));
        }
        if self.method == Method::Msprt && self.family == ResponseKind::PoissonLog {
            return Err(Error::InvalidConfig(
                "the mSPRT baseline does not support Poisson responses".into(),
            ));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Either one effect size or a grid; alternatives are spread round-robin
/// across the grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EffectSizes {
    Single(f64),
    Grid(Vec<f64>),
}

impl EffectSizes {
    pub fn values(&self) -> Vec<f64> {
        match self {
            EffectSizes::Single(b) => vec![*b],
            EffectSizes::Grid(v) => v.clone(),
        }
    }
}

/// Configuration of a multiple-testing study: the `simulate` schema plus the
/// hypothesis-count, effect, and replication keys. Each replication runs m
/// independent comparisons (three quarters null, one quarter alternative at
/// an alternating-sign effect pattern) to the cap and feeds the final
/// p-values to the step-up procedure.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultipleConfig {
    pub family: ResponseKind,
    pub scheme: CovariateScheme,
    pub theta0: Vec<f64>,
    #[serde(default)]
    pub beta_true: Option<Vec<f64>>,
    pub beta0: Vec<f64>,
    pub alpha: f64,
    pub tau: f64,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_cap_n")]
    pub cap_n: usize,
    #[serde(default)]
    pub replications: Option<usize>,
    pub seed: u64,
    pub method: Method,
    /// Number of hypotheses per replication; must be divisible by 4.
    pub m: usize,
    /// Effect size(s) B for the alternatives, placed at (-B, B, -B, ...).
    pub effect_b: EffectSizes,
    /// Number of study replications.
    pub reps: usize,
}

impl MultipleConfig {
    /// The per-comparison experiment configuration for hypothesis `index` out
    /// of `m`. The first 3m/4 comparisons are true nulls.
    pub fn comparison_config(&self, index: usize) -> ExperimentConfig {
        let d = self.scheme.dim();
        let n_null = 3 * self.m / 4;
        let beta_true = if index < n_null {
            self.beta0.clone()
        } else {
            let grid = self.effect_b.values();
            let b = grid[(index - n_null) % grid.len()];
            let mut v = self.beta0.clone();
            for (j, slot) in v.iter_mut().enumerate().take(d) {
                let sign = if j % 2 == 0 { -1.0 } else { 1.0 };
                *slot += sign * b;
            }
            v
        };
        ExperimentConfig {
            family: self.family,
            scheme: self.scheme,
            theta0: self.theta0.clone(),
            beta_true,
            beta0: self.beta0.clone(),
            alpha: self.alpha,
            tau: self.tau,
            batch: self.batch,
            cap_n: self.cap_n,
            replications: 1,
            seed: self.seed,
            method: self.method,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.m % 4 != 0 {
            return Err(Error::InvalidConfig(format!(
                "m must be a positive multiple of 4, got {}",
                self.m
            )));
        }
        if self.reps == 0 {
            return Err(Error::InvalidConfig("reps must be at least 1".into()));
        }
        if self.effect_b.values().is_empty() {
            return Err(Error::InvalidConfig("effect_b must not be empty".into()));
        }
        if self.effect_b.values().iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidConfig("effect_b must be finite".into()));
        }
        // The per-comparison configs carry the remaining checks.
        self.comparison_config(0).validate()?;
        self.comparison_config(self.m - 1).validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: MultipleConfig = toml::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
family = "bernoulli_logit"
scheme = "std_normal"
theta0 = [0.0, 1.0]
beta_true = [0.0, 0.0]
beta0 = [0.0, 0.0]
alpha = 0.05
tau = 1.0
replications = 10
seed = 7
method = "sst"
"#;

    #[test]
    fn parses_the_documented_schema_with_defaults() {
        let cfg = ExperimentConfig::from_toml(BASE).unwrap();
        assert_eq!(cfg.batch, 200);
        assert_eq!(cfg.cap_n, 10_000);
        assert_eq!(cfg.method, Method::Sst);
        assert_eq!(cfg.dim(), 2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{BASE}\nnot_a_key = 1\n");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn dimension_mismatches_are_rejected() {
        let text = BASE.replace("theta0 = [0.0, 1.0]", "theta0 = [0.0, 1.0, -1.0]");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn odd_batches_are_rejected() {
        let text = format!("{BASE}\nbatch = 201\n");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn msprt_on_poisson_is_rejected() {
        let text = BASE
            .replace("bernoulli_logit", "poisson_log")
            .replace("\"sst\"", "\"msprt\"");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn multiple_config_spreads_alternatives_over_the_grid() {
        let text = format!("{BASE}\nm = 8\neffect_b = [0.1, 0.2]\nreps = 3\n");
        let cfg = MultipleConfig::from_toml(&text).unwrap();
        // 6 nulls, 2 alternatives at B = 0.1 and 0.2 with pattern (-B, B).
        for i in 0..6 {
            assert_eq!(cfg.comparison_config(i).beta_true, vec![0.0, 0.0]);
        }
        assert_eq!(cfg.comparison_config(6).beta_true, vec![-0.1, 0.1]);
        assert_eq!(cfg.comparison_config(7).beta_true, vec![-0.2, 0.2]);
    }

    #[test]
    fn multiple_config_accepts_scalar_effect() {
        let text = format!("{BASE}\nm = 4\neffect_b = 0.3\nreps = 1\n");
        let cfg = MultipleConfig::from_toml(&text).unwrap();
        assert_eq!(cfg.comparison_config(3).beta_true, vec![-0.3, 0.3]);
    }
}
