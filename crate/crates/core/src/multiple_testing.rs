//! Multiple-testing procedures over vectors of sequential p-values:
//! Bonferroni (family-wise error) and the correlation-robust step-up
//! procedure whose harmonic factor keeps the false discovery rate controlled
//! under arbitrary dependence between the p-values.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A batch of m labeled p-values tested at a common level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonBatch {
    entries: Vec<(String, f64)>,
    alpha: f64,
}

impl ComparisonBatch {
    pub fn new(entries: Vec<(String, f64)>, alpha: f64) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidConfig(
                "a comparison batch needs at least one p-value".into(),
            ));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie strictly inside (0, 1), got {alpha}"
            )));
        }
        for (label, p) in &entries {
            if !(0.0..=1.0).contains(p) || !p.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "p-value for {label} must lie in [0, 1], got {p}"
                )));
            }
        }
        Ok(ComparisonBatch { entries, alpha })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    /// Entries sorted by (p, label); the label tiebreak makes the result
    /// independent of input order.
    fn sorted(&self) -> Vec<&(String, f64)> {
        let mut v: Vec<&(String, f64)> = self.entries.iter().collect();
        v.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        v
    }
}

/// Bonferroni correction: reject every hypothesis with p <= alpha / m.
pub fn bonferroni(batch: &ComparisonBatch) -> BTreeSet<String> {
    let threshold = batch.alpha() / batch.len() as f64;
    batch
        .entries()
        .iter()
        .filter(|(_, p)| *p <= threshold)
        .map(|(label, _)| label.clone())
        .collect()
}

/// Correlation-robust step-up procedure: with p-values in increasing order,
/// find the maximal j with p_(j) <= alpha * j / (m * sum_{r=1..m} 1/r) and
/// reject the first j. The boundary comparison is inclusive.
pub fn bh_correlated(batch: &ComparisonBatch) -> BTreeSet<String> {
    let m = batch.len();
    let harmonic: f64 = (1..=m).map(|r| 1.0 / r as f64).sum();
    let sorted = batch.sorted();
    let mut cutoff = 0;
    for (idx, (_, p)) in sorted.iter().enumerate() {
        let j = (idx + 1) as f64;
        if *p <= batch.alpha() * j / (m as f64 * harmonic) {
            cutoff = idx + 1;
        }
    }
    sorted[..cutoff]
        .iter()
        .map(|(label, _)| label.clone())
        .collect()
}
