//! Mixture sequential probability ratio test baseline for the average
//! treatment effect.
//!
//! The statistic is the normal-approximation mSPRT with a Gaussian N(0, tau^2)
//! mixture over the mean difference. Covariates are deliberately ignored: the
//! underlying two-sample model has no baseline term, which is exactly the
//! failure mode the sequential score test addresses. The variance of the mean
//! difference is the model plug-in under that two-sample GLM with known
//! dispersion: phat(1-phat)/n per arm for Bernoulli responses and a(phi)/n
//! per arm for normal responses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::{FamilySpec, ResponseKind};
use crate::score::{Arm, Observation};
use crate::sst::{RunOutcome, SstTrace, TraceCheckpoint};

/// Per-arm running sums for the two-sample statistic.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ArmMoments {
    pub n: usize,
    pub sum: f64,
    pub sum_sq: f64,
}

impl ArmMoments {
    fn push(&mut self, y: f64) {
        self.n += 1;
        self.sum += y;
        self.sum_sq += y * y;
    }

    pub fn mean(&self) -> Option<f64> {
        if self.n == 0 {
            None
        } else {
            Some(self.sum / self.n as f64)
        }
    }

    /// Unbiased sample variance; diagnostic only.
    pub fn sample_variance(&self) -> Option<f64> {
        if self.n < 2 {
            return None;
        }
        let n = self.n as f64;
        let mean = self.sum / n;
        Some(((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0))
    }
}

/// Running state of one mSPRT comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MsprtState {
    pub treatment: ArmMoments,
    pub control: ArmMoments,
    pub tau: f64,
}

impl MsprtState {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "prior scale tau must be a finite non-negative real, got {tau}"
            )));
        }
        Ok(MsprtState {
            treatment: ArmMoments::default(),
            control: ArmMoments::default(),
            tau,
        })
    }

    pub fn push(&mut self, arm: Arm, y: f64) {
        match arm {
            Arm::Treatment => self.treatment.push(y),
            Arm::Control => self.control.push(y),
        }
    }

    pub fn counts(&self) -> (usize, usize) {
        (self.treatment.n, self.control.n)
    }

    /// Observed mean difference.
    pub fn delta_hat(&self) -> Option<f64> {
        Some(self.treatment.mean()? - self.control.mean()?)
    }

    /// Model plug-in variance of the mean difference under the two-sample
    /// GLM with known dispersion.
    pub fn variance_estimate(&self, family: FamilySpec) -> Option<f64> {
        if self.treatment.n < 2 || self.control.n < 2 {
            return None;
        }
        let per_arm = |m: &ArmMoments| -> Option<f64> {
            match family.kind() {
                ResponseKind::BernoulliLogit => {
                    let p = m.mean()?;
                    Some(p * (1.0 - p) / m.n as f64)
                }
                ResponseKind::NormalIdentity => Some(family.dispersion() / m.n as f64),
                ResponseKind::PoissonLog => None,
            }
        };
        Some(per_arm(&self.treatment)? + per_arm(&self.control)?)
    }
}

/// log of the mixture likelihood-ratio statistic:
/// sqrt(V / (V + tau^2)) * exp( tau^2 delta^2 / (2 V (V + tau^2)) ).
///
/// Returns None (a deferred checkpoint) when the variance estimate is zero
/// or not yet estimable.
pub fn log_msprt_statistic(state: &MsprtState, family: FamilySpec) -> Option<f64> {
    if state.tau == 0.0 {
        return Some(0.0);
    }
    let v = state.variance_estimate(family)?;
    if !(v > 0.0) {
        return None;
    }
    let delta = state.delta_hat()?;
    let tau2 = state.tau * state.tau;
    let log_det = 0.5 * (v / (v + tau2)).ln();
    let quad = tau2 * delta * delta / (2.0 * v * (v + tau2));
    Some(log_det + quad)
}

/// The statistic itself.
pub fn msprt_statistic(state: &MsprtState, family: FamilySpec) -> Option<f64> {
    log_msprt_statistic(state, family).map(f64::exp)
}

/// Configuration of one mSPRT run. Shares the trace protocol of the
/// sequential score test (batch checkpoints, cap, capped p-value).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MsprtConfig {
    pub family: FamilySpec,
    pub tau: f64,
    pub alpha: f64,
    pub batch: usize,
    pub cap_n: usize,
    pub stop_early: bool,
}

impl MsprtConfig {
    pub fn new(family: FamilySpec, tau: f64, alpha: f64, batch: usize, cap_n: usize) -> Result<Self> {
        let cfg = MsprtConfig {
            family,
            tau,
            alpha,
            batch,
            cap_n,
            stop_early: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.family.kind() == ResponseKind::PoissonLog {
            return Err(Error::InvalidConfig(
                "the mSPRT baseline supports Bernoulli and normal responses only".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie strictly inside (0, 1), got {}",
                self.alpha
            )));
        }
        if self.batch == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if self.cap_n < self.batch {
            return Err(Error::InvalidConfig(format!(
                "cap_n ({}) must be at least the batch size ({})",
                self.cap_n, self.batch
            )));
        }
        Ok(())
    }
}

/// Incremental mSPRT engine with the same checkpoint cadence and trace type
/// as the score-test engine. Only (y, arm) is consumed; covariates are
/// ignored by design.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MsprtEngine {
    config: MsprtConfig,
    state: MsprtState,
    trace: SstTrace,
    events_in_batch: usize,
    events_total: usize,
}

impl MsprtEngine {
    pub fn new(config: MsprtConfig) -> Result<Self> {
        config.validate()?;
        Ok(MsprtEngine {
            state: MsprtState::new(config.tau)?,
            trace: SstTrace::new(config.alpha)?,
            config,
            events_in_batch: 0,
            events_total: 0,
        })
    }

    pub fn trace(&self) -> &SstTrace {
        &self.trace
    }

    pub fn into_trace(self) -> SstTrace {
        self.trace
    }

    pub fn counts(&self) -> (usize, usize) {
        self.state.counts()
    }

    pub fn events_total(&self) -> usize {
        self.events_total
    }

    pub fn finished(&self) -> bool {
        (self.config.stop_early && self.trace.is_decided()) || self.at_cap()
    }

    fn at_cap(&self) -> bool {
        let (n1, n0) = self.state.counts();
        n1 >= self.config.cap_n && n0 >= self.config.cap_n
    }

    pub fn push(&mut self, obs: &Observation, position: usize) -> Result<Option<TraceCheckpoint>> {
        if !self.config.family.valid_response(obs.y) {
            return Err(Error::InvalidObservation {
                position,
                reason: format!(
                    "response {} not admissible for {}",
                    obs.y,
                    self.config.family.kind().name()
                ),
            });
        }
        self.state.push(obs.arm, obs.y);
        self.events_in_batch += 1;
        self.events_total += 1;
        if self.events_in_batch == self.config.batch || self.at_cap() {
            self.events_in_batch = 0;
            return Ok(Some(self.checkpoint()));
        }
        Ok(None)
    }

    pub fn flush(&mut self) -> Option<TraceCheckpoint> {
        if self.events_in_batch == 0 {
            return None;
        }
        self.events_in_batch = 0;
        Some(self.checkpoint())
    }

    fn checkpoint(&mut self) -> TraceCheckpoint {
        let (n1, n0) = self.state.counts();
        let ll = log_msprt_statistic(&self.state, self.config.family);
        self.trace.update(ll, n1, n0).clone()
    }
}

/// Run the mSPRT baseline over a finite observation stream.
pub fn run_msprt<I>(stream: I, config: &MsprtConfig) -> Result<RunOutcome>
where
    I: IntoIterator<Item = Observation>,
{
    let mut engine = MsprtEngine::new(config.clone())?;
    for (position, obs) in stream.into_iter().enumerate() {
        engine.push(&obs, position)?;
        if engine.finished() {
            return Ok(RunOutcome {
                trace: engine.into_trace(),
                partial_final: false,
            });
        }
    }
    let partial_final = engine.flush().is_some();
    Ok(RunOutcome {
        trace: engine.into_trace(),
        partial_final,
    })
}
