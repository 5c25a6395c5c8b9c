//! Sequential hypothesis testing for streaming A/B experiments.
//!
//! The centerpiece is the sequential score test: a mixture of asymptotic
//! probability ratios of the average treatment-arm score, evaluated in closed
//! form, monitored continuously through an always-valid p-value process. A
//! two-sample mSPRT baseline, Bonferroni and correlation-robust step-up
//! multiple-testing procedures, and the GLM machinery they share live here
//! too.
//!
//! The crate is organized along the pipeline:
//!
//! - [`family`]: exponential-family response models and canonical links.
//! - [`mle`]: control-arm maximum likelihood (Newton scoring / IRLS).
//! - [`score`]: per-arm scores, information matrices, checkpoint snapshots.
//! - [`sst`]: the mixture statistic, p-value process, and batch runner.
//! - [`msprt`]: the covariate-blind mSPRT baseline on the same protocol.
//! - [`multiple_testing`]: Bonferroni and correlation-robust step-up.

pub mod error;
pub mod family;
pub mod linalg;
pub mod mle;
pub mod msprt;
pub mod multiple_testing;
pub mod score;
pub mod seeding;
pub mod sst;

pub use error::{Error, Result};
pub use family::{FamilySpec, LinearPredictorSpec, PredictorMode, ResponseKind};
pub use mle::{fit_control_mle, ControlFit, FitOptions};
pub use msprt::{run_msprt, MsprtConfig, MsprtEngine, MsprtState};
pub use multiple_testing::{bh_correlated, bonferroni, ComparisonBatch};
pub use score::{Arm, ArmStore, Observation, ScoreSnapshot};
pub use seeding::derive_seed;
pub use sst::{
    lambda_tilde, log_lambda_tilde, log_mixture_statistic, mixture_statistic, run_sst,
    CheckpointRecord, PriorSpec, RunOutcome, SstEngine, SstTrace, StopInfo, TestConfig,
    TraceCheckpoint,
};
