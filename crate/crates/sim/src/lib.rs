//! Synthetic-experiment harness: covariate generators, experiment configs,
//! and replicated runs estimating type I error, power, FDR, and TPR for the
//! sequential score test and the mSPRT baseline.

pub mod config;
pub mod covariates;
pub mod runner;

pub use config::{EffectSizes, ExperimentConfig, Method, MultipleConfig};
pub use covariates::{generate_covariates, CovariateScheme};
pub use runner::{
    derive_seed, estimate_operating_characteristics, generate_arm_batch, run_multiple_testing_study,
    run_single, ExperimentStream, MetricsReport,
};
