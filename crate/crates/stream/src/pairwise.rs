//! Pairwise multiple comparisons: every pair among k variants is run as its
//! own session to a fixed per-arm sample target, and the final p-values go
//! through the correlation-robust step-up procedure.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use seqscore_core::error::Error;
use seqscore_core::multiple_testing::{bh_correlated, ComparisonBatch};

use crate::error::{Result, StreamError};
use crate::event::EventRecord;
use crate::session::{replay, Session, SessionConfig};

/// One pair's outcome. Pairs that never accumulate `stop_n` per arm are
/// deferred and excluded from the step-up input.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairOutcome {
    pub control: String,
    pub treatment: String,
    pub n1: usize,
    pub n0: usize,
    pub p_value: Option<f64>,
    pub deferred: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairwiseReport {
    pub outcomes: Vec<PairOutcome>,
    /// Pairs that reached the target and entered the procedure.
    pub m_effective: usize,
    pub deferred_pairs: usize,
    pub rejected: Vec<(String, String)>,
}

/// Run all k(k-1)/2 comparisons among `variants` to `stop_n` observations
/// per arm and apply the step-up procedure to the resulting p-values. The
/// earlier variant in the list is the pair's control.
pub fn pairwise_compare(
    events: &[EventRecord],
    variants: &[String],
    stop_n: usize,
    base: &SessionConfig,
) -> Result<PairwiseReport> {
    if variants.len() < 2 {
        return Err(StreamError::Core(Error::InvalidConfig(
            "pairwise comparison needs at least two variants".into(),
        )));
    }
    if stop_n < 1 {
        return Err(StreamError::Core(Error::InvalidConfig(
            "stop_n must be at least 1".into(),
        )));
    }
    {
        let mut sorted = variants.to_vec();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != variants.len() {
            return Err(StreamError::Core(Error::InvalidConfig(
                "variant list contains duplicates".into(),
            )));
        }
    }

    let mut pairs = Vec::new();
    for i in 0..variants.len() {
        for j in (i + 1)..variants.len() {
            pairs.push((variants[i].clone(), variants[j].clone()));
        }
    }

    let outcomes: Vec<Result<PairOutcome>> = pairs
        .par_iter()
        .map(|(control, treatment)| {
            let mut config = base.clone();
            config.control_variant = Some(control.clone());
            config.aa_seed = None;
            config.cap_n = stop_n;
            config.stop_early = false;
            let mut session = Session::new(config)?;
            let filtered = events
                .iter()
                .enumerate()
                .filter(|(_, e)| e.variant_id == *control || e.variant_id == *treatment)
                .map(|(i, e)| (i + 1, Ok(e.clone())));
            replay(&mut session, filtered, true)?;
            let (n1, n0) = session.counts();
            let reached = n1 >= stop_n && n0 >= stop_n;
            Ok(PairOutcome {
                control: control.clone(),
                treatment: treatment.clone(),
                n1,
                n0,
                p_value: if reached { Some(session.p_value()) } else { None },
                deferred: !reached,
            })
        })
        .collect();

    let mut resolved = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        resolved.push(o?);
    }

    let entries: Vec<(String, f64)> = resolved
        .iter()
        .filter_map(|o| {
            o.p_value
                .map(|p| (format!("{}|{}", o.control, o.treatment), p))
        })
        .collect();
    let m_effective = entries.len();
    let deferred_pairs = resolved.len() - m_effective;
    let rejected = if entries.is_empty() {
        Vec::new()
    } else {
        let batch = ComparisonBatch::new(entries, base.alpha)?;
        let rejected_labels = bh_correlated(&batch);
        resolved
            .iter()
            .filter(|o| {
                o.p_value.is_some()
                    && rejected_labels.contains(&format!("{}|{}", o.control, o.treatment))
            })
            .map(|o| (o.control.clone(), o.treatment.clone()))
            .collect()
    };

    Ok(PairwiseReport {
        outcomes: resolved,
        m_effective,
        deferred_pairs,
        rejected,
    })
}
