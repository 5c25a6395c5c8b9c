//! The sequential score test: empirical probability ratios of the average
//! score, their Gaussian-mixture integral in closed form, the always-valid
//! p-value process, and the batch-cadence runner.
//!
//! All statistics are computed and accumulated in the log domain, and the
//! stop rule compares there too: the test stops at the first checkpoint with
//! log running max >= log(1/alpha), the exact threshold rule. The reported
//! p-value is `min(1, exp(-log running max))`.

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::FamilySpec;
use crate::linalg::{spd_factor, symmetrized};
use crate::mle::FitOptions;
use crate::score::{snapshot, Arm, ArmStore, Observation, ScoreSnapshot};

/// Isotropic Gaussian mixture prior on the treatment effect: center `beta0`,
/// scale `tau`. `tau == 0` degenerates to a point mass at the center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    beta0: Vec<f64>,
    tau: f64,
}

impl PriorSpec {
    pub fn new(beta0: Vec<f64>, tau: f64) -> Result<Self> {
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "prior scale tau must be a finite non-negative real, got {tau}"
            )));
        }
        if beta0.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidConfig("prior center must be finite".into()));
        }
        Ok(PriorSpec { beta0, tau })
    }

    /// Centered at zero, the usual no-effect null.
    pub fn centered(dim: usize, tau: f64) -> Result<Self> {
        PriorSpec::new(vec![0.0; dim], tau)
    }

    pub fn beta0(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.beta0)
    }

    pub fn beta0_slice(&self) -> &[f64] {
        &self.beta0
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn dim(&self) -> usize {
        self.beta0.len()
    }
}

/// log of the empirical probability ratio at a fixed alternative `beta`:
/// the quotient of the two multivariate normal densities with common
/// covariance V_n / n1 and means info1 (beta - beta0) versus zero, both
/// evaluated at s_bar.
pub fn log_lambda_tilde(
    snap: &ScoreSnapshot,
    beta: &DVector<f64>,
    beta0: &DVector<f64>,
) -> Result<f64> {
    let d = snap.dim();
    if beta.len() != d || beta0.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: beta.len(),
        });
    }
    let sigma = &snap.v_n / snap.n1 as f64;
    let factor = spd_factor(&sigma, "inverting the scaled composite variance")?;
    let m = &snap.info1 * (beta - beta0);
    let z = factor.solve_vec(&m);
    Ok(snap.s_bar.dot(&z) - 0.5 * m.dot(&z))
}

/// The ratio itself; prefer the log form inside monitoring loops.
pub fn lambda_tilde(
    snap: &ScoreSnapshot,
    beta: &DVector<f64>,
    beta0: &DVector<f64>,
) -> Result<f64> {
    log_lambda_tilde(snap, beta, beta0).map(f64::exp)
}

/// log of the mixture statistic: the integral of the empirical ratio against
/// the Gaussian prior, in closed form.
///
/// With b = info1' Sigma^{-1} s_bar, A = info1' Sigma^{-1} info1 and
/// Sigma = V_n / n1, the integral is
/// det(I + tau^2 A)^{-1/2} exp( (tau^2 / 2) b' (I + tau^2 A)^{-1} b ),
/// using (A + tau^{-2} I)^{-1} = tau^2 (I + tau^2 A)^{-1}. The closed form is
/// pinned against a Gauss-Hermite quadrature oracle in the test suites.
pub fn log_mixture_statistic(snap: &ScoreSnapshot, prior: &PriorSpec) -> Result<f64> {
    let d = snap.dim();
    if prior.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: prior.dim(),
        });
    }
    let tau = prior.tau();
    if tau == 0.0 {
        return Ok(0.0);
    }
    let sigma = &snap.v_n / snap.n1 as f64;
    let factor = spd_factor(&sigma, "inverting the scaled composite variance")?;
    // K = Sigma^{-1} info1; A = info1' K; b = K' s_bar.
    let k = factor.solve_mat(&snap.info1);
    let a = symmetrized(&(snap.info1.transpose() * &k));
    let b = k.transpose() * &snap.s_bar;

    let tau2 = tau * tau;
    let mut m = &a * tau2;
    for i in 0..d {
        m[(i, i)] += 1.0;
    }
    let mf = spd_factor(&m, "factoring the mixture-prior system")?;
    let log_det = mf.log_det();
    let quad = 0.5 * tau2 * b.dot(&mf.solve_vec(&b));
    Ok(-0.5 * log_det + quad)
}

/// The mixture statistic itself.
pub fn mixture_statistic(snap: &ScoreSnapshot, prior: &PriorSpec) -> Result<f64> {
    log_mixture_statistic(snap, prior).map(f64::exp)
}

/// One monitoring checkpoint of a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceCheckpoint {
    pub n1: usize,
    pub n0: usize,
    /// None when the checkpoint was deferred (sample gate or estimation
    /// failure); the running maximum is carried forward.
    pub log_lambda: Option<f64>,
    /// Running max of log lambda over all non-deferred checkpoints so far;
    /// None before the first statistic.
    pub log_running_max: Option<f64>,
    pub p_value: f64,
    pub deferred: bool,
    /// True only on the checkpoint where the stop decision fired.
    pub decided: bool,
}

/// Stop decision attached to a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopInfo {
    pub checkpoint_index: usize,
    pub n1: usize,
    pub n0: usize,
}

/// Running state of one sequential comparison: checkpoint history, running
/// maximum, current p-value, and the stop decision once it fires. Rejection
/// is the only possible decision; reaching the cap without stopping accepts
/// the null.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SstTrace {
    alpha: f64,
    /// log(1/alpha); the stop rule is evaluated in the log domain so the
    /// boundary case lambda == 1/alpha stops exactly.
    log_alpha_inv: f64,
    checkpoints: Vec<TraceCheckpoint>,
    log_running_max: Option<f64>,
    decided: Option<StopInfo>,
}

impl SstTrace {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie strictly inside (0, 1), got {alpha}"
            )));
        }
        Ok(SstTrace {
            alpha,
            log_alpha_inv: -alpha.ln(),
            checkpoints: Vec::new(),
            log_running_max: None,
            decided: None,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn checkpoints(&self) -> &[TraceCheckpoint] {
        &self.checkpoints
    }

    pub fn is_empty(&self) -> bool {
        self.checkpoints.is_empty()
    }

    pub fn decided(&self) -> Option<&StopInfo> {
        self.decided.as_ref()
    }

    pub fn is_decided(&self) -> bool {
        self.decided.is_some()
    }

    /// Current p-value: min(1, 1 / running max), 1 before any statistic.
    pub fn p_value(&self) -> f64 {
        p_from_log_max(self.log_running_max)
    }

    /// Append a checkpoint. `log_lambda = None` marks a deferred checkpoint:
    /// the running maximum and p-value are carried forward unchanged.
    pub fn update(&mut self, log_lambda: Option<f64>, n1: usize, n0: usize) -> &TraceCheckpoint {
        let deferred = log_lambda.is_none();
        if let Some(ll) = log_lambda {
            if self.log_running_max.is_none_or(|m| ll > m) {
                self.log_running_max = Some(ll);
            }
        }
        let p_value = p_from_log_max(self.log_running_max);
        let mut fired = false;
        if self.decided.is_none()
            && self.log_running_max.is_some_and(|m| m >= self.log_alpha_inv)
        {
            self.decided = Some(StopInfo {
                checkpoint_index: self.checkpoints.len(),
                n1,
                n0,
            });
            fired = true;
        }
        self.checkpoints.push(TraceCheckpoint {
            n1,
            n0,
            log_lambda,
            log_running_max: self.log_running_max,
            p_value,
            deferred,
            decided: fired,
        });
        self.checkpoints.last().expect("just pushed")
    }

    /// First checkpoint index whose running maximum meets 1/alpha, evaluated
    /// retrospectively for any level from the recorded history.
    pub fn stop_index_for(&self, alpha: f64) -> Option<usize> {
        let threshold = -alpha.ln();
        self.checkpoints
            .iter()
            .position(|c| c.log_running_max.is_some_and(|m| m >= threshold))
    }

    /// Flat export records in the fixed external schema.
    pub fn records(&self) -> Vec<CheckpointRecord> {
        self.checkpoints
            .iter()
            .map(|c| CheckpointRecord {
                n1: c.n1 as u64,
                n0: c.n0 as u64,
                log_lambda_mix: c.log_lambda,
                p_value: c.p_value,
                deferred: c.deferred,
                decided: c.decided,
            })
            .collect()
    }

    /// Write the trace as line-delimited JSON records, one per checkpoint.
    pub fn write_records<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for record in self.records() {
            let line = serde_json::to_string(&record).expect("checkpoint records are serializable");
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

fn p_from_log_max(log_running_max: Option<f64>) -> f64 {
    match log_running_max {
        Some(m) => (-m).exp().min(1.0),
        None => 1.0,
    }
}

/// Line-delimited export record. Field names and order are fixed; golden
/// tests depend on them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub n1: u64,
    pub n0: u64,
    pub log_lambda_mix: Option<f64>,
    pub p_value: f64,
    pub deferred: bool,
    pub decided: bool,
}

/// Configuration of one sequential score test run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestConfig {
    pub family: FamilySpec,
    pub prior: PriorSpec,
    pub alpha: f64,
    /// Events per checkpoint, counted across both arms.
    pub batch: usize,
    /// Per-arm observation cap; the run accepts the null when both arms
    /// reach it without a rejection.
    pub cap_n: usize,
    /// When false the run ignores the threshold and always continues to the
    /// cap, e.g. to read off p at a fixed horizon.
    pub stop_early: bool,
}

impl TestConfig {
    pub fn new(family: FamilySpec, prior: PriorSpec, alpha: f64, batch: usize, cap_n: usize) -> Result<Self> {
        let cfg = TestConfig {
            family,
            prior,
            alpha,
            batch,
            cap_n,
            stop_early: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
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

    pub fn dim(&self) -> usize {
        self.prior.dim()
    }
}

/// Outcome of a run: the trace plus whether the final checkpoint covered a
/// partial batch at end of stream.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trace: SstTrace,
    pub partial_final: bool,
}

/// Incremental SST engine: owns the arm stores and the trace, consumes
/// observations one at a time, and produces a checkpoint every `batch`
/// events. Estimation failures and the minimum-sample gate defer the
/// checkpoint instead of aborting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SstEngine {
    config: TestConfig,
    treatment: ArmStore,
    control: ArmStore,
    trace: SstTrace,
    events_in_batch: usize,
    events_total: usize,
    last_theta: Option<Vec<f64>>,
}

impl SstEngine {
    pub fn new(config: TestConfig) -> Result<Self> {
        config.validate()?;
        let dim = config.dim();
        Ok(SstEngine {
            trace: SstTrace::new(config.alpha)?,
            treatment: ArmStore::new(Arm::Treatment, dim),
            control: ArmStore::new(Arm::Control, dim),
            config,
            events_in_batch: 0,
            events_total: 0,
            last_theta: None,
        })
    }

    pub fn trace(&self) -> &SstTrace {
        &self.trace
    }

    pub fn into_trace(self) -> SstTrace {
        self.trace
    }

    pub fn counts(&self) -> (usize, usize) {
        (self.treatment.len(), self.control.len())
    }

    pub fn events_total(&self) -> usize {
        self.events_total
    }

    /// Whether the run is over: decided (when stopping early) or both arms
    /// at the cap.
    pub fn finished(&self) -> bool {
        (self.config.stop_early && self.trace.is_decided()) || self.at_cap()
    }

    fn at_cap(&self) -> bool {
        self.treatment.len() >= self.config.cap_n && self.control.len() >= self.config.cap_n
    }

    /// Feed one observation. Returns the new checkpoint when this event
    /// completed a batch. `position` is used for error reporting only.
    pub fn push(&mut self, obs: &Observation, position: usize) -> Result<Option<TraceCheckpoint>> {
        self.validate_observation(obs, position)?;
        let store = match obs.arm {
            Arm::Treatment => &mut self.treatment,
            Arm::Control => &mut self.control,
        };
        store.push(&obs.x, obs.y).map_err(|e| Error::InvalidObservation {
            position,
            reason: e.to_string(),
        })?;
        self.events_in_batch += 1;
        self.events_total += 1;
        if self.events_in_batch == self.config.batch || self.at_cap() {
            self.events_in_batch = 0;
            return Ok(Some(self.checkpoint()?));
        }
        Ok(None)
    }

    /// Force a checkpoint on a partial batch (end of stream). No-op when the
    /// current batch is empty.
    pub fn flush(&mut self) -> Result<Option<TraceCheckpoint>> {
        if self.events_in_batch == 0 {
            return Ok(None);
        }
        self.events_in_batch = 0;
        Ok(Some(self.checkpoint()?))
    }

    fn validate_observation(&self, obs: &Observation, position: usize) -> Result<()> {
        if obs.x.len() != self.config.dim() {
            return Err(Error::InvalidObservation {
                position,
                reason: format!(
                    "covariate row has length {}, expected {}",
                    obs.x.len(),
                    self.config.dim()
                ),
            });
        }
        if obs.x[0] != 1.0 {
            return Err(Error::InvalidObservation {
                position,
                reason: format!("covariate row must start with 1, got {}", obs.x[0]),
            });
        }
        if obs.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidObservation {
                position,
                reason: "covariates must be finite".into(),
            });
        }
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
        Ok(())
    }

    fn checkpoint(&mut self) -> Result<TraceCheckpoint> {
        let (n1, n0) = self.counts();
        let beta0 = self.prior_center();
        let init = self.last_theta.as_ref().map(|t| DVector::from_column_slice(t));
        let result = snapshot(
            self.config.family,
            &self.treatment,
            &self.control,
            &beta0,
            init.as_ref(),
            &FitOptions::default(),
        )
        .and_then(|snap| {
            let ll = log_mixture_statistic(&snap, &self.config.prior)?;
            Ok((snap, ll))
        });
        let checkpoint = match result {
            Ok((snap, ll)) => {
                self.last_theta = Some(snap.theta_hat.as_slice().to_vec());
                self.trace.update(Some(ll), n1, n0)
            }
            Err(e) if e.is_deferrable() => self.trace.update(None, n1, n0),
            Err(e) => return Err(e),
        };
        Ok(checkpoint.clone())
    }

    fn prior_center(&self) -> DVector<f64> {
        self.config.prior.beta0()
    }
}

/// Run the sequential score test over a finite observation stream: append to
/// the arm stores, snapshot every `batch` events, update the trace, and stop
/// at the decision or when both arms reach the cap.
pub fn run_sst<I>(stream: I, config: &TestConfig) -> Result<RunOutcome>
where
    I: IntoIterator<Item = Observation>,
{
    let mut engine = SstEngine::new(config.clone())?;
    for (position, obs) in stream.into_iter().enumerate() {
        engine.push(&obs, position)?;
        if engine.finished() {
            return Ok(RunOutcome {
                trace: engine.into_trace(),
                partial_final: false,
            });
        }
    }
    let partial_final = engine.flush()?.is_some();
    Ok(RunOutcome {
        trace: engine.into_trace(),
        partial_final,
    })
}
