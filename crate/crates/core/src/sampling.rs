//! Query strategies for choosing the next batch of documents to screen.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::Prediction;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SamplingError {
    #[error("batch size must be positive")]
    ZeroBatch,
    #[error("unknown strategy {0:?}, expected random, lc or hp")]
    UnknownStrategy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyKind {
    #[serde(rename = "random")]
    Random,
    #[serde(rename = "lc")]
    LeastConfidence,
    #[serde(rename = "hp")]
    HighestPriority,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 3] = [
        StrategyKind::Random,
        StrategyKind::LeastConfidence,
        StrategyKind::HighestPriority,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Random => "random",
            StrategyKind::LeastConfidence => "lc",
            StrategyKind::HighestPriority => "hp",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = SamplingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "random" => Ok(StrategyKind::Random),
            "lc" | "least_confidence" => Ok(StrategyKind::LeastConfidence),
            "hp" | "highest_priority" => Ok(StrategyKind::HighestPriority),
            other => Err(SamplingError::UnknownStrategy(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingStrategy {
    pub kind: StrategyKind,
    pub batch_size: usize,
}

impl SamplingStrategy {
    pub fn new(kind: StrategyKind, batch_size: usize) -> Result<Self, SamplingError> {
        if batch_size == 0 {
            return Err(SamplingError::ZeroBatch);
        }
        Ok(SamplingStrategy { kind, batch_size })
    }

    pub fn sample<R: Rng + ?Sized>(&self, pool: &[Prediction], rng: &mut R) -> Vec<String> {
        sample(self.kind, pool, self.batch_size, rng).expect("batch_size validated at construction")
    }
}

impl Default for SamplingStrategy {
    fn default() -> Self {
        SamplingStrategy {
            kind: StrategyKind::Random,
            batch_size: 1000,
        }
    }
}

/// Picks `min(k, pool.len())` ids.
///
/// * `Random`: uniform without replacement.
/// * `LeastConfidence`: highest uncertainty first.
/// * `HighestPriority`: highest priority score first.
///
/// Ranked strategies break ties by ascending id, so their output does not
/// depend on the order of `pool`.
pub fn sample<R: Rng + ?Sized>(
    kind: StrategyKind,
    pool: &[Prediction],
    k: usize,
    rng: &mut R,
) -> Result<Vec<String>, SamplingError> {
    if k == 0 {
        return Err(SamplingError::ZeroBatch);
    }
    let k = k.min(pool.len());
    let key: fn(&Prediction) -> f64 = match kind {
        StrategyKind::Random => {
            return Ok(rand::seq::index::sample(rng, pool.len(), k)
                .into_iter()
                .map(|i| pool[i].doc_id.clone())
                .collect());
        }
        StrategyKind::LeastConfidence => |p| p.uncertainty,
        StrategyKind::HighestPriority => |p| p.priority_score,
    };
    let mut ranked: Vec<&Prediction> = pool.iter().collect();
    let cmp = |a: &&Prediction, b: &&Prediction| key(b).total_cmp(&key(a)).then_with(|| a.doc_id.cmp(&b.doc_id));
    if k < ranked.len() {
        ranked.select_nth_unstable_by(k, cmp);
        ranked.truncate(k);
    }
    ranked.sort_by(cmp);
    Ok(ranked.into_iter().map(|p| p.doc_id.clone()).collect())
}
