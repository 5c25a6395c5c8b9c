//! Experiment execution: batch generators, single runs, and replicated
//! operating-characteristic estimates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use seqscore_core::error::{Error, Result};
use seqscore_core::family::{linear_predictor, FamilySpec};
use seqscore_core::msprt::{run_msprt, MsprtConfig};
use seqscore_core::multiple_testing::{bh_correlated, ComparisonBatch};
use seqscore_core::score::{Arm, Observation};
use seqscore_core::sst::{run_sst, PriorSpec, SstTrace, TestConfig};

use crate::config::{ExperimentConfig, Method, MultipleConfig};

pub use seqscore_core::seeding::derive_seed;

/// One generated batch, split equally between the arms. Control responses
/// use eta = theta0'x, treatment responses add beta_true'x.
pub fn generate_arm_batch<R: rand::Rng + ?Sized>(
    family: FamilySpec,
    scheme: crate::covariates::CovariateScheme,
    theta0: &[f64],
    beta_true: &[f64],
    batch: usize,
    rng: &mut R,
) -> (Vec<Observation>, Vec<Observation>) {
    debug_assert!(batch % 2 == 0);
    let per_arm = batch / 2;
    let mut treatment = Vec::with_capacity(per_arm);
    let mut control = Vec::with_capacity(per_arm);
    for _ in 0..per_arm {
        let xt = scheme.sample_row(rng);
        let eta_t = linear_predictor(theta0, beta_true, &xt, true);
        treatment.push(Observation::new(Arm::Treatment, family.sample_response(eta_t, rng), xt));

        let xc = scheme.sample_row(rng);
        let eta_c = linear_predictor(theta0, beta_true, &xc, false);
        control.push(Observation::new(Arm::Control, family.sample_response(eta_c, rng), xc));
    }
    (treatment, control)
}

/// Observation stream for one replication: batches of `batch` events, arms
/// interleaved, up to `cap_n` per arm.
pub struct ExperimentStream {
    family: FamilySpec,
    config: ExperimentConfig,
    rng: ChaCha8Rng,
    buffer: Vec<Observation>,
    cursor: usize,
    emitted_per_arm: usize,
}

impl ExperimentStream {
    pub fn new(config: &ExperimentConfig, family: FamilySpec, seed: u64) -> Self {
        ExperimentStream {
            family,
            config: config.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            buffer: Vec::new(),
            cursor: 0,
            emitted_per_arm: 0,
        }
    }

    fn refill(&mut self) {
        let (treatment, control) = generate_arm_batch(
            self.family,
            self.config.scheme,
            &self.config.theta0,
            &self.config.beta_true,
            self.config.batch,
            &mut self.rng,
        );
        self.buffer.clear();
        for (t, c) in treatment.into_iter().zip(control) {
            self.buffer.push(t);
            self.buffer.push(c);
        }
        self.cursor = 0;
        self.emitted_per_arm += self.config.batch / 2;
    }
}

impl Iterator for ExperimentStream {
    type Item = Observation;

    fn next(&mut self) -> Option<Observation> {
        if self.cursor == self.buffer.len() {
            if self.emitted_per_arm >= self.config.cap_n {
                return None;
            }
            self.refill();
        }
        let obs = self.buffer[self.cursor].clone();
        self.cursor += 1;
        Some(obs)
    }
}

/// Run one simulated experiment with the configured method.
pub fn run_single(
    config: &ExperimentConfig,
    dispersion: f64,
    seed: u64,
    stop_early: bool,
) -> Result<SstTrace> {
    let family = config.family_spec(dispersion)?;
    let stream = ExperimentStream::new(config, family, seed);
    match config.method {
        Method::Sst => {
            let prior = PriorSpec::new(config.beta0.clone(), config.tau)?;
            let mut test = TestConfig::new(family, prior, config.alpha, config.batch, config.cap_n)?;
            test.stop_early = stop_early;
            Ok(run_sst(stream, &test)?.trace)
        }
        Method::Msprt => {
            let mut test =
                MsprtConfig::new(family, config.tau, config.alpha, config.batch, config.cap_n)?;
            test.stop_early = stop_early;
            Ok(run_msprt(stream, &test)?.trace)
        }
    }
}

/// Aggregated operating characteristics over replications. Identifying
/// fields first, then the estimates; the struct serializes to one
/// machine-readable record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub method: Method,
    pub alpha: f64,
    pub tau: f64,
    pub batch: usize,
    pub cap_n: usize,
    pub replications: usize,
    pub seed: u64,
    /// Fraction of replications that rejected; type I error under the null
    /// configuration, power otherwise.
    pub rejection_rate: f64,
    /// Binomial standard error sqrt(r (1 - r) / reps).
    pub rejection_se: f64,
    pub rejections: usize,
    /// Mean total sample size (both arms) at the stop, over rejecting runs.
    pub mean_stop_n: Option<f64>,
    /// Replications containing at least one deferred checkpoint.
    pub deferred_runs: usize,
    /// Multiple-testing study estimates; absent for plain runs.
    pub m: Option<usize>,
    pub fdr: Option<f64>,
    pub fdr_se: Option<f64>,
    pub tpr: Option<f64>,
    pub tpr_se: Option<f64>,
}

impl MetricsReport {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    /// Small fixed-width table for terminals.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("config      : {}\n", self.label));
        out.push_str(&format!(
            "method      : {}   alpha {}   tau {}   batch {}   cap {}\n",
            self.method.name(),
            self.alpha,
            self.tau,
            self.batch,
            self.cap_n
        ));
        out.push_str(&format!(
            "replications: {}   seed {}\n",
            self.replications, self.seed
        ));
        out.push_str(&format!(
            "rejections  : {} / {}  (rate {:.4} +- {:.4})\n",
            self.rejections, self.replications, self.rejection_rate, self.rejection_se
        ));
        match self.mean_stop_n {
            Some(n) => out.push_str(&format!("mean stop n : {n:.1} events over rejecting runs\n")),
            None => out.push_str("mean stop n : n/a (no rejections)\n"),
        }
        if self.deferred_runs > 0 {
            out.push_str(&format!(
                "deferred    : {} run(s) had deferred checkpoints\n",
                self.deferred_runs
            ));
        }
        if let Some(m) = self.m {
            out.push_str(&format!("hypotheses  : m = {m}\n"));
            match (self.fdr, self.fdr_se) {
                (Some(f), Some(se)) => out.push_str(&format!("fdr         : {f:.4} +- {se:.4}\n")),
                _ => {}
            }
            match (self.tpr, self.tpr_se) {
                (Some(t), Some(se)) => out.push_str(&format!("tpr         : {t:.4} +- {se:.4}\n")),
                _ => out.push_str("tpr         : n/a (no true alternatives)\n"),
            }
        }
        out
    }
}

fn binomial_se(rate: f64, reps: usize) -> f64 {
    (rate * (1.0 - rate) / reps as f64).sqrt()
}

/// Run `replications` independent experiments and estimate the rejection
/// rate and mean stopping time. Replications parallelize over a worker pool;
/// aggregation is sequential over the ordered results, so identical
/// config + seed gives byte-identical reports.
pub fn estimate_operating_characteristics(
    config: &ExperimentConfig,
    dispersion: f64,
) -> Result<MetricsReport> {
    config.validate()?;
    let traces: Vec<Result<SstTrace>> = (0..config.replications)
        .into_par_iter()
        .map(|r| run_single(config, dispersion, derive_seed(config.seed, r as u64), true))
        .collect();

    let mut rejections = 0usize;
    let mut stop_total = 0.0f64;
    let mut deferred_runs = 0usize;
    for trace in traces {
        let trace = trace?;
        if trace.checkpoints().iter().any(|c| c.deferred) {
            deferred_runs += 1;
        }
        if let Some(stop) = trace.decided() {
            rejections += 1;
            stop_total += (stop.n1 + stop.n0) as f64;
        }
    }
    let rate = rejections as f64 / config.replications as f64;
    Ok(MetricsReport {
        label: format!("{:?}/{:?}", config.family, config.scheme),
        method: config.method,
        alpha: config.alpha,
        tau: config.tau,
        batch: config.batch,
        cap_n: config.cap_n,
        replications: config.replications,
        seed: config.seed,
        rejection_rate: rate,
        rejection_se: binomial_se(rate, config.replications),
        rejections,
        mean_stop_n: if rejections > 0 {
            Some(stop_total / rejections as f64)
        } else {
            None
        },
        deferred_runs,
        m: None,
        fdr: None,
        fdr_se: None,
        tpr: None,
        tpr_se: None,
    })
}

/// One replication of the multiple-testing study: m independent comparisons
/// run to the cap, final p-values through the correlation-robust step-up.
fn multiple_testing_rep(
    config: &MultipleConfig,
    dispersion: f64,
    rep: usize,
) -> Result<(f64, Option<f64>, bool)> {
    let m = config.m;
    let rep_seed = derive_seed(config.seed, rep as u64);
    let mut entries = Vec::with_capacity(m);
    let mut is_null = Vec::with_capacity(m);
    let mut any_deferred = false;
    for i in 0..m {
        let cmp = config.comparison_config(i);
        let seed = derive_seed(rep_seed, i as u64);
        let trace = run_single(&cmp, dispersion, seed, false)?;
        any_deferred |= trace.checkpoints().iter().any(|c| c.deferred);
        entries.push((format!("cmp{i:03}"), trace.p_value()));
        is_null.push(cmp.beta_true == cmp.beta0);
    }
    let batch = ComparisonBatch::new(entries, config.alpha)?;
    let rejected = bh_correlated(&batch);
    let mut false_rejections = 0usize;
    let mut true_rejections = 0usize;
    for (i, null) in is_null.iter().enumerate() {
        if rejected.contains(&format!("cmp{i:03}")) {
            if *null {
                false_rejections += 1;
            } else {
                true_rejections += 1;
            }
        }
    }
    let n_alternatives = is_null.iter().filter(|n| !**n).count();
    let fdp = false_rejections as f64 / rejected.len().max(1) as f64;
    let tpr = if n_alternatives > 0 {
        Some(true_rejections as f64 / n_alternatives as f64)
    } else {
        None
    };
    Ok((fdp, tpr, any_deferred))
}

/// Estimate FDR and TPR of the step-up procedure over `reps` replications of
/// an m-hypothesis study.
pub fn run_multiple_testing_study(
    config: &MultipleConfig,
    dispersion: f64,
) -> Result<MetricsReport> {
    config.validate()?;
    let outcomes: Vec<Result<(f64, Option<f64>, bool)>> = (0..config.reps)
        .into_par_iter()
        .map(|rep| multiple_testing_rep(config, dispersion, rep))
        .collect();

    let mut fdps = Vec::with_capacity(config.reps);
    let mut tprs = Vec::with_capacity(config.reps);
    let mut deferred_runs = 0usize;
    for out in outcomes {
        let (fdp, tpr, deferred) = out?;
        fdps.push(fdp);
        if let Some(t) = tpr {
            tprs.push(t);
        }
        if deferred {
            deferred_runs += 1;
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let se = |v: &[f64]| {
        if v.len() < 2 {
            return 0.0;
        }
        let m = mean(v);
        let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64;
        (var / v.len() as f64).sqrt()
    };
    let fdr = mean(&fdps);
    let (tpr, tpr_se) = if tprs.is_empty() {
        (None, None)
    } else {
        (Some(mean(&tprs)), Some(se(&tprs)))
    };
    Ok(MetricsReport {
        label: format!("{:?}/{:?}/multiple", config.family, config.scheme),
        method: config.method,
        alpha: config.alpha,
        tau: config.tau,
        batch: config.batch,
        cap_n: config.cap_n,
        replications: config.reps,
        seed: config.seed,
        // Per-comparison rejection counts are not meaningful at the study
        // level; FDR/TPR below carry the estimates.
        rejection_rate: 0.0,
        rejection_se: 0.0,
        rejections: 0,
        mean_stop_n: None,
        deferred_runs,
        m: Some(config.m),
        fdr: Some(fdr),
        fdr_se: Some(se(&fdps)),
        tpr,
        tpr_se,
    })
}
