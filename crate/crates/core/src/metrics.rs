//! Team-efficiency measures.
//!
//! Human effort (HE) is the share of the corpus screened by people. Inclusion
//! rate (IR) is the share of all relevant documents found so far. A screening
//! run traces an HE/IR curve; the usual single-number summary is the effort
//! needed to reach a target IR, by default 0.8.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::Label;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("corpus size must be positive")]
    EmptyCorpus,
    #[error("no included documents; inclusion rate undefined")]
    NoIncluded,
    #[error("count {count} exceeds total {total}")]
    CountExceedsTotal { count: usize, total: usize },
    #[error("target inclusion rate {target} never reached (max {max_ir})")]
    TargetNotReached { target: f64, max_ir: f64 },
    #[error("no oracle decision for screened document {0}")]
    MissingOracle(String),
    #[error("document {0} screened twice")]
    DuplicateScreen(String),
    #[error("baseline effort must be positive")]
    NonPositiveBaseline,
    #[error("screening rate must be positive")]
    NonPositiveRate,
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// `n_screened / n`.
pub fn human_effort(n_screened: usize, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(MetricsError::EmptyCorpus);
    }
    if n_screened > n {
        return Err(MetricsError::CountExceedsTotal {
            count: n_screened,
            total: n,
        });
    }
    Ok(n_screened as f64 / n as f64)
}

/// `n_identified / n_included`.
pub fn inclusion_rate(n_identified: usize, n_included: usize) -> Result<f64> {
    if n_included == 0 {
        return Err(MetricsError::NoIncluded);
    }
    if n_identified > n_included {
        return Err(MetricsError::CountExceedsTotal {
            count: n_identified,
            total: n_included,
        });
    }
    Ok(n_identified as f64 / n_included as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreeningStats {
    pub n: usize,
    pub n_included: usize,
    pub n_screened: usize,
    pub n_identified: usize,
}

impl ScreeningStats {
    pub fn human_effort(&self) -> Result<f64> {
        human_effort(self.n_screened, self.n)
    }

    pub fn inclusion_rate(&self) -> Result<f64> {
        inclusion_rate(self.n_identified, self.n_included)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub screened: usize,
    pub identified: usize,
    pub he: f64,
    pub ir: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeIrCurve {
    pub n: usize,
    pub n_included: usize,
    pub points: Vec<CurvePoint>,
}

impl HeIrCurve {
    pub fn last(&self) -> Option<&CurvePoint> {
        self.points.last()
    }

    pub fn max_ir(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.ir)
    }

    pub fn stats_at(&self, i: usize) -> ScreeningStats {
        let p = &self.points[i];
        ScreeningStats {
            n: self.n,
            n_included: self.n_included,
            n_screened: p.screened,
            n_identified: p.identified,
        }
    }

    /// Writes `screened,identified,he,ir` rows with a header.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["screened", "identified", "he", "ir"])?;
        for p in &self.points {
            w.write_record([
                p.screened.to_string(),
                p.identified.to_string(),
                p.he.to_string(),
                p.ir.to_string(),
            ])?;
        }
        w.flush()
    }

    /// Keeps every `step`-th point plus the last one.
    pub fn thinned(&self, step: usize) -> HeIrCurve {
        let step = step.max(1);
        let last = self.points.len().saturating_sub(1);
        HeIrCurve {
            n: self.n,
            n_included: self.n_included,
            points: self
                .points
                .iter()
                .enumerate()
                .filter(|(i, _)| (i + 1) % step == 0 || *i == last)
                .map(|(_, p)| *p)
                .collect(),
        }
    }
}

/// Cumulative HE/IR after each screened document, in screening order.
pub fn build_curve<S: AsRef<str>>(
    screening_order: &[S],
    oracle: &HashMap<String, Label>,
    n: usize,
    n_included: usize,
) -> Result<HeIrCurve> {
    if n == 0 {
        return Err(MetricsError::EmptyCorpus);
    }
    if n_included == 0 {
        return Err(MetricsError::NoIncluded);
    }
    if screening_order.len() > n {
        return Err(MetricsError::CountExceedsTotal {
            count: screening_order.len(),
            total: n,
        });
    }
    let mut seen = std::collections::HashSet::with_capacity(screening_order.len());
    let mut identified = 0;
    let mut points = Vec::with_capacity(screening_order.len());
    for (i, id) in screening_order.iter().enumerate() {
        let id = id.as_ref();
        if !seen.insert(id) {
            return Err(MetricsError::DuplicateScreen(id.to_string()));
        }
        match oracle.get(id) {
            Some(Label::Included) => identified += 1,
            Some(Label::Excluded) => {}
            None => return Err(MetricsError::MissingOracle(id.to_string())),
        }
        let screened = i + 1;
        points.push(CurvePoint {
            screened,
            identified,
            he: human_effort(screened, n)?,
            ir: inclusion_rate(identified, n_included)?,
        });
    }
    Ok(HeIrCurve {
        n,
        n_included,
        points,
    })
}

/// Smallest HE at which IR reaches `target_ir` (no interpolation).
pub fn he_at_target(curve: &HeIrCurve, target_ir: f64) -> Result<f64> {
    curve
        .points
        .iter()
        .find(|p| p.ir >= target_ir)
        .map(|p| p.he)
        .ok_or(MetricsError::TargetNotReached {
            target: target_ir,
            max_ir: curve.max_ir(),
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffortSaved {
    /// Difference in effort, in fraction-of-corpus points.
    pub absolute: f64,
    /// Difference relative to the baseline effort.
    pub relative: f64,
}

pub fn effort_saved(he_baseline: f64, he_new: f64) -> Result<EffortSaved> {
    if !(he_baseline > 0.0) {
        return Err(MetricsError::NonPositiveBaseline);
    }
    let absolute = he_baseline - he_new;
    Ok(EffortSaved {
        absolute,
        relative: absolute / he_baseline,
    })
}

/// Screening papers per hour measured on a team of human screeners.
pub const PAPERS_PER_HOUR: f64 = 38.6;

/// `(he_baseline - he_new) * n / rate`.
pub fn hours_saved(he_baseline: f64, he_new: f64, n: usize, rate: f64) -> Result<f64> {
    if !(rate > 0.0) {
        return Err(MetricsError::NonPositiveRate);
    }
    Ok((he_baseline - he_new) * n as f64 / rate)
}

/// Headline numbers for one screening run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub he_at_80: Option<f64>,
    pub effort_saved_abs: Option<f64>,
    pub effort_saved_rel: Option<f64>,
    pub hours_saved: Option<f64>,
    pub f1: Option<f64>,
}

impl SummaryReport {
    /// Summary against the no-assistance baseline, where HE at target equals the target.
    pub fn against_random_baseline(curve: &HeIrCurve, target_ir: f64, f1: Option<f64>) -> Self {
        let he = he_at_target(curve, target_ir).ok();
        let saved = he.and_then(|he| effort_saved(target_ir, he).ok());
        SummaryReport {
            he_at_80: he,
            effort_saved_abs: saved.map(|s| s.absolute),
            effort_saved_rel: saved.map(|s| s.relative),
            hours_saved: he.and_then(|he| hours_saved(target_ir, he, curve.n, PAPERS_PER_HOUR).ok()),
            f1,
        }
    }
}
