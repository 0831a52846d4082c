//! Append-only project event log and the state it folds into.
//!
//! Every state change of a project is an event. Applying the events in log
//! order to an empty [`ProjectState`] reproduces the live state exactly; the
//! engine never mutates state any other way.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::EngineConfig;
use crate::classifier::Label;
use crate::sampling::StrategyKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Bootstrapping,
    ActiveLearning,
    PrioritizedScreening,
    Done,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Bootstrapping => "bootstrapping",
            Phase::ActiveLearning => "active_learning",
            Phase::PrioritizedScreening => "prioritized_screening",
            Phase::Done => "done",
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One human include/exclude decision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub doc_id: String,
    pub decision: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exclusion_criterion: Option<String>,
    pub screener_id: String,
    pub timestamp: DateTime<Utc>,
    #[serde(default)]
    pub iteration: u32,
}

impl LabelRecord {
    pub fn new(doc_id: impl Into<String>, decision: Label, screener_id: impl Into<String>, timestamp: DateTime<Utc>) -> Self {
        LabelRecord {
            doc_id: doc_id.into(),
            decision,
            exclusion_criterion: None,
            screener_id: screener_id.into(),
            timestamp,
            iteration: 0,
        }
    }
}

/// One screen-train-predict-sample cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: u32,
    pub strategy: StrategyKind,
    /// Batch issued for screening at the end of this iteration; empty when none was.
    pub sampled_ids: Vec<String>,
    pub training_size: usize,
    pub model_version: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_similarity: Option<f64>,
    /// Included documents in the batch labeled just before this iteration.
    pub batch_included_count: usize,
    pub batch_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation_f1: Option<f64>,
    pub stop_training: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LedgerEvent {
    Label(LabelRecord),
    BatchIssued { iteration: u32, ids: Vec<String> },
    IterationCompleted(IterationRecord),
    PhaseChanged { from: Phase, to: Phase },
}

/// Included count of one fully screened batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchStat {
    pub phase: Phase,
    pub size: usize,
    pub included: usize,
}

impl BatchStat {
    pub fn rate(&self) -> f64 {
        if self.size == 0 {
            0.0
        } else {
            self.included as f64 / self.size as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectState {
    pub project_id: String,
    pub config: EngineConfig,
    pub phase: Phase,
    pub model_version: u64,
    pub screened: BTreeSet<String>,
    pub unscreened: BTreeSet<String>,
    /// Latest decision per screened document.
    pub effective: BTreeMap<String, Label>,
    /// Documents in the order they were first labeled.
    pub screening_order: Vec<String>,
    /// Most recently issued batch.
    pub issued: Vec<String>,
    issued_closed: bool,
    pub iterations: Vec<IterationRecord>,
    pub batch_history: Vec<BatchStat>,
    /// First-time labels accumulating toward the next prioritized-phase batch.
    open_chunk: (usize, usize),
    pub ledger_len: usize,
}

impl ProjectState {
    pub fn new(project_id: impl Into<String>, config: EngineConfig, corpus_ids: impl IntoIterator<Item = String>) -> Self {
        ProjectState {
            project_id: project_id.into(),
            config,
            phase: Phase::Bootstrapping,
            model_version: 0,
            screened: BTreeSet::new(),
            unscreened: corpus_ids.into_iter().collect(),
            effective: BTreeMap::new(),
            screening_order: Vec::new(),
            issued: Vec::new(),
            issued_closed: true,
            iterations: Vec::new(),
            batch_history: Vec::new(),
            open_chunk: (0, 0),
            ledger_len: 0,
        }
    }

    /// Folds events in order onto a fresh state.
    pub fn replay<'a>(
        project_id: impl Into<String>,
        config: EngineConfig,
        corpus_ids: impl IntoIterator<Item = String>,
        events: impl IntoIterator<Item = &'a LedgerEvent>,
    ) -> Self {
        let mut state = ProjectState::new(project_id, config, corpus_ids);
        for e in events {
            state.apply(e);
        }
        state
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.screened.contains(doc_id) || self.unscreened.contains(doc_id)
    }

    pub fn corpus_size(&self) -> usize {
        self.screened.len() + self.unscreened.len()
    }

    pub fn identified(&self) -> usize {
        self.effective.values().filter(|l| **l == Label::Included).count()
    }

    /// Issued ids still without a decision.
    pub fn pending(&self) -> Vec<String> {
        self.issued
            .iter()
            .filter(|id| !self.screened.contains(*id))
            .cloned()
            .collect()
    }

    pub fn apply(&mut self, event: &LedgerEvent) {
        self.ledger_len += 1;
        match event {
            LedgerEvent::Label(rec) => self.apply_label(rec),
            LedgerEvent::BatchIssued { ids, .. } => {
                self.issued = ids.clone();
                self.issued_closed = false;
                self.close_issued_if_complete();
            }
            LedgerEvent::IterationCompleted(rec) => {
                self.model_version = rec.model_version;
                self.iterations.push(rec.clone());
            }
            LedgerEvent::PhaseChanged { to, .. } => {
                if *to == Phase::PrioritizedScreening {
                    self.issued_closed = true;
                }
                self.phase = *to;
            }
        }
    }

    fn apply_label(&mut self, rec: &LabelRecord) {
        let first = !self.effective.contains_key(&rec.doc_id);
        self.effective.insert(rec.doc_id.clone(), rec.decision);
        if first {
            self.unscreened.remove(&rec.doc_id);
            self.screened.insert(rec.doc_id.clone());
            self.screening_order.push(rec.doc_id.clone());
            if self.phase >= Phase::PrioritizedScreening {
                self.open_chunk.0 += 1;
                if rec.decision == Label::Included {
                    self.open_chunk.1 += 1;
                }
                if self.open_chunk.0 == self.config.batch_size {
                    self.batch_history.push(BatchStat {
                        phase: self.phase,
                        size: self.open_chunk.0,
                        included: self.open_chunk.1,
                    });
                    self.open_chunk = (0, 0);
                }
            }
        }
        self.close_issued_if_complete();
    }

    fn close_issued_if_complete(&mut self) {
        if self.issued_closed || self.issued.iter().any(|id| !self.screened.contains(id)) {
            return;
        }
        self.issued_closed = true;
        let included = self
            .issued
            .iter()
            .filter(|id| self.effective.get(*id) == Some(&Label::Included))
            .count();
        self.batch_history.push(BatchStat {
            phase: self.phase,
            size: self.issued.len(),
            included,
        });
    }
}
