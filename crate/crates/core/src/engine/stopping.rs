//! Stop rules: when to stop retraining, and when screening has run dry.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{EngineError, IterationRecord, Result};

/// Spearman rank correlation between two rankings of the same ids,
/// `1 - 6 * sum(d^2) / (n * (n^2 - 1))` where `d` is the position difference.
/// Rankings of fewer than two ids are reported as identical.
pub fn rank_similarity<S: AsRef<str>>(prev: &[S], cur: &[S]) -> Result<f64> {
    if prev.len() != cur.len() {
        return Err(EngineError::RankingMismatch(format!(
            "{} ranked ids vs {}",
            prev.len(),
            cur.len()
        )));
    }
    let n = cur.len();
    let positions: HashMap<&str, usize> = prev.iter().enumerate().map(|(i, id)| (id.as_ref(), i)).collect();
    if positions.len() != n {
        return Err(EngineError::RankingMismatch("duplicate id in ranking".into()));
    }
    let mut sum_d2: u128 = 0;
    for (i, id) in cur.iter().enumerate() {
        let j = *positions
            .get(id.as_ref())
            .ok_or_else(|| EngineError::RankingMismatch(format!("{} missing from previous ranking", id.as_ref())))?;
        let d = i.abs_diff(j) as u128;
        sum_d2 += d * d;
    }
    if n < 2 {
        return Ok(1.0);
    }
    let n = n as f64;
    Ok(1.0 - 6.0 * sum_d2 as f64 / (n * (n * n - 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    /// Stop once the last `patience` rank similarities are all at or above this.
    /// `None` disables the similarity test.
    pub rho_threshold: Option<f64>,
    pub patience: usize,
    pub max_iterations: Option<usize>,
    pub max_training_size: Option<usize>,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            rho_threshold: Some(0.95),
            patience: 1,
            max_iterations: None,
            max_training_size: None,
        }
    }
}

impl StopRule {
    pub fn should_stop_training(&self, history: &[IterationRecord]) -> bool {
        let Some(last) = history.last() else {
            return false;
        };
        if self.max_iterations.is_some_and(|m| history.len() >= m)
            || self.max_training_size.is_some_and(|m| last.training_size >= m)
        {
            return true;
        }
        let Some(threshold) = self.rho_threshold else {
            return false;
        };
        let patience = self.patience.max(1);
        history.len() >= patience
            && history[history.len() - patience..]
                .iter()
                .all(|r| r.rank_similarity.is_some_and(|rho| rho >= threshold))
    }
}

/// Similarity-only form of [`StopRule::should_stop_training`].
pub fn should_stop_training(history: &[IterationRecord], rho_threshold: f64, patience: usize) -> bool {
    StopRule {
        rho_threshold: Some(rho_threshold),
        patience,
        max_iterations: None,
        max_training_size: None,
    }
    .should_stop_training(history)
}

/// True when the latest batch's inclusion rate fell below `min_rate`.
/// Advice only; the screening team makes the call.
pub fn should_stop_screening(recent_batch_included: usize, batch_size: usize, min_rate: f64) -> Result<bool> {
    if batch_size == 0 {
        return Err(EngineError::ZeroBatch);
    }
    Ok((recent_batch_included as f64 / batch_size as f64) < min_rate)
}
