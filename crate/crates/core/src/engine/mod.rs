//! The screen-train-predict-sample loop.
//!
//! A project moves through four phases:
//!
//! 1. `bootstrapping`: a uniform-random initial batch is issued for labeling.
//! 2. `active_learning`: each [`Project::run_iteration`] trains a new model on
//!    every decision so far, scores the unscreened pool, and issues the next
//!    batch chosen by the configured query strategy.
//! 3. `prioritized_screening`: training has stopped; people screen the rest in
//!    descending priority-score order.
//! 4. `done`.
//!
//! All state changes go through the [`LedgerEvent`] log, so replaying the log
//! rebuilds the [`ProjectState`]. Training is split into
//! [`Project::prepare_iteration`], [`IterationJob::run`] and
//! [`Project::commit_iteration`] so the expensive middle step can run without
//! holding the project's write lock.

mod ledger;
mod stopping;
mod store;

use std::collections::{HashMap, HashSet};
use std::path::PathBuf;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ledger::{BatchStat, IterationRecord, LabelRecord, LedgerEvent, Phase, ProjectState};
pub use stopping::{rank_similarity, should_stop_screening, should_stop_training, StopRule};
pub use store::{ProjectSnapshot, ProjectStore, StoredConfig};

use crate::classifier::{
    self, ClassifierError, F1Report, FeatureStore, Featurizer, Label, Prediction, TrainConfig, TrainingSet,
};
use crate::classifier::features::fnv1a;
use crate::corpus::{Corpus, CorpusError, Document, ScreeningText};
use crate::sampling::{self, SamplingError, StrategyKind};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("unknown document {0}")]
    UnknownDocument(String),
    #[error("operation requires phase {expected}, project is in {actual}")]
    WrongPhase { expected: Phase, actual: Phase },
    #[error("pending labels for {} issued documents", .0.len())]
    PendingLabels(Vec<String>),
    #[error("initial batch already issued")]
    AlreadyBootstrapped,
    #[error("no trained model yet")]
    NoModel,
    #[error("batch size must be positive")]
    ZeroBatch,
    #[error("ranking mismatch: {0}")]
    RankingMismatch(String),
    #[error("project changed while the training job ran")]
    StaleJob,
    #[error("invalid config: {field}: {message}")]
    InvalidConfig { field: &'static str, message: String },
    #[error("corrupt project data: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EngineError>;

/// Whether a stop-training verdict moves the project on by itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopMode {
    /// The verdict advances the phase (simulation).
    Binding,
    /// The verdict is surfaced as advice and a person advances the phase.
    Advisory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub strategy: StrategyKind,
    pub batch_size: usize,
    pub init_size: usize,
    pub train_fraction: f64,
    pub stop: StopRule,
    /// Real-time inclusion rate below which stopping screening is advised.
    pub min_inclusion_rate: f64,
    pub stop_mode: StopMode,
    /// Models trained per iteration; their priority scores are averaged.
    pub ensemble_runs: usize,
    pub train: TrainConfig,
    pub f1_threshold: f64,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            strategy: StrategyKind::HighestPriority,
            batch_size: 1000,
            init_size: 1000,
            train_fraction: 0.85,
            stop: StopRule::default(),
            min_inclusion_rate: 0.02,
            stop_mode: StopMode::Advisory,
            ensemble_runs: 1,
            train: TrainConfig::default(),
            f1_threshold: 0.5,
            seed: 0,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field, message: &str| {
            Err(EngineError::InvalidConfig {
                field,
                message: message.to_string(),
            })
        };
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if self.init_size == 0 {
            return bad("init_size", "must be positive");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction", "must lie in (0, 1)");
        }
        if let Some(t) = self.stop.rho_threshold {
            if !(-1.0..=1.0).contains(&t) {
                return bad("stop.rho_threshold", "must lie in [-1, 1]");
            }
        }
        if self.stop.patience == 0 {
            return bad("stop.patience", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.min_inclusion_rate) {
            return bad("min_inclusion_rate", "must lie in [0, 1]");
        }
        if self.ensemble_runs == 0 {
            return bad("ensemble_runs", "must be positive");
        }
        if self.train.epochs == 0 {
            return bad("train.epochs", "must be positive");
        }
        if !(self.train.learning_rate > 0.0) {
            return bad("train.learning_rate", "must be positive");
        }
        if !(1..=26).contains(&self.train.hash_bits) {
            return bad("train.hash_bits", "must lie in 1..=26");
        }
        if !(0.0..=1.0).contains(&self.f1_threshold) {
            return bad("f1_threshold", "must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Seeded generator for one stochastic step, so no RNG state needs persisting.
pub fn derive_rng(seed: u64, purpose: &str, iteration: u32) -> ChaCha8Rng {
    let key = format!("{seed}:{purpose}:{iteration}");
    ChaCha8Rng::seed_from_u64(fnv1a(key.as_bytes()))
}

/// Ranked scores of one model version over the pool it was trained to rank.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSnapshot {
    pub model_version: u64,
    /// Descending priority score, ascending id on ties.
    pub ranked: Vec<Prediction>,
    position: HashMap<String, usize>,
}

impl PredictionSnapshot {
    pub fn new(model_version: u64, predictions: &[Prediction]) -> Self {
        let ranked: Vec<Prediction> = classifier::rank_by_priority(predictions).into_iter().cloned().collect();
        let position = ranked.iter().enumerate().map(|(i, p)| (p.doc_id.clone(), i)).collect();
        PredictionSnapshot {
            model_version,
            ranked,
            position,
        }
    }

    pub fn score(&self, id: &str) -> Option<f64> {
        self.position.get(id).map(|&i| self.ranked[i].priority_score)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapBatch {
    pub ids: Vec<String>,
    /// The corpus held fewer unscreened documents than requested.
    pub clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelAck {
    pub newly_screened: bool,
    pub screened: usize,
    pub identified: usize,
    pub ledger_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Advice {
    pub stop_training: bool,
    pub last_rank_similarity: Option<f64>,
    pub rho_threshold: Option<f64>,
    pub stop_screening: bool,
    pub last_batch_rate: Option<f64>,
    pub min_inclusion_rate: f64,
}

/// Inputs for one training round, detached from the project.
#[derive(Debug, Clone)]
pub struct IterationJob {
    index: u32,
    base_version: u64,
    ledger_len: usize,
    training: TrainingSet,
    pool: Vec<String>,
    previous: Option<Arc<PredictionSnapshot>>,
    batch_included_count: usize,
    batch_size: usize,
    features: Arc<FeatureStore>,
    config: EngineConfig,
}

/// Output of [`IterationJob::run`].
#[derive(Debug, Clone)]
pub struct IterationOutcome {
    job: IterationJob,
    model: Arc<classifier::ClassifierModel>,
    snapshot: Arc<PredictionSnapshot>,
    rank_similarity: Option<f64>,
    validation: Option<F1Report>,
}

impl IterationOutcome {
    pub fn model(&self) -> &Arc<classifier::ClassifierModel> {
        &self.model
    }
}

impl IterationJob {
    pub fn index(&self) -> u32 {
        self.index
    }

    pub fn training_size(&self) -> usize {
        self.training.len()
    }

    /// Split, oversample, train, score the pool, and compare rankings.
    pub fn run(self) -> Result<IterationOutcome> {
        let cfg = &self.config;
        let mut split_rng = derive_rng(cfg.seed, "split", self.index);
        let (train_part, val_part) = if self.training.len() >= 2 {
            classifier::split_train_val(&self.training, cfg.train_fraction, &mut split_rng)?
        } else {
            (self.training.clone(), TrainingSet::default())
        };
        // Fall back to all labels when the split leaves one class on the train side.
        let (train_part, val_part) = {
            let (neg, pos) = train_part.class_counts();
            if neg == 0 || pos == 0 {
                (self.training.clone(), TrainingSet::default())
            } else {
                (train_part, val_part)
            }
        };
        let mut os_rng = derive_rng(cfg.seed, "oversample", self.index);
        let balanced = classifier::oversample(&train_part, &mut os_rng)?;

        let version = self.base_version + 1;
        let pool: Vec<&str> = self.pool.iter().map(String::as_str).collect();
        let val_ids: Vec<&str> = val_part.items.iter().map(|i| i.doc_id.as_str()).collect();
        let mut pool_runs = Vec::with_capacity(cfg.ensemble_runs);
        let mut val_runs = Vec::with_capacity(cfg.ensemble_runs);
        let mut model = None;
        for run in 0..cfg.ensemble_runs {
            let train_cfg = TrainConfig {
                seed: fnv1a(format!("{}:train:{}:{run}", cfg.seed, self.index).as_bytes()),
                ..cfg.train
            };
            let m = classifier::train(&balanced, &self.features, &train_cfg)?.with_version(version);
            pool_runs.push(classifier::predict_ids(&m, &self.features, &pool)?);
            val_runs.push(classifier::predict_ids(&m, &self.features, &val_ids)?);
            model.get_or_insert(m);
        }
        let predictions = classifier::mean_predictions(&pool_runs);
        let val_preds = classifier::mean_predictions(&val_runs);
        let validation = (!val_part.is_empty()).then(|| {
            F1Report::from_scores(
                val_preds.iter().zip(&val_part.items).map(|(p, i)| (p.priority_score, i.label)),
                cfg.f1_threshold,
            )
        });

        let snapshot = PredictionSnapshot::new(version, &predictions);
        let rank_similarity = match &self.previous {
            Some(prev) => {
                let current: HashSet<&str> = pool.iter().copied().collect();
                let prev_ranked: Vec<&str> = prev
                    .ranked
                    .iter()
                    .map(|p| p.doc_id.as_str())
                    .filter(|id| current.contains(id))
                    .collect();
                let cur_ranked: Vec<&str> = snapshot.ranked.iter().map(|p| p.doc_id.as_str()).collect();
                if prev_ranked.len() == cur_ranked.len() && cur_ranked.len() >= 2 {
                    Some(rank_similarity(&prev_ranked, &cur_ranked)?)
                } else {
                    None
                }
            }
            None => None,
        };
        Ok(IterationOutcome {
            model: Arc::new(model.expect("ensemble_runs >= 1")),
            snapshot: Arc::new(snapshot),
            rank_similarity,
            validation,
            job: self,
        })
    }
}

pub struct Project {
    state: ProjectState,
    events: Vec<LedgerEvent>,
    documents: Arc<Vec<Document>>,
    texts: Arc<Vec<ScreeningText>>,
    doc_index: Arc<HashMap<String, usize>>,
    features: Arc<FeatureStore>,
    model: Option<Arc<classifier::ClassifierModel>>,
    predictions: Option<Arc<PredictionSnapshot>>,
    store: Option<ProjectStore>,
}

impl std::fmt::Debug for Project {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Project")
            .field("project_id", &self.state.project_id)
            .field("phase", &self.state.phase)
            .field("model_version", &self.state.model_version)
            .finish_non_exhaustive()
    }
}

impl Project {
    /// In-memory project over a corpus and its screening texts (same order).
    pub fn new(project_id: impl Into<String>, config: EngineConfig, corpus: &Corpus, texts: Vec<ScreeningText>) -> Result<Self> {
        config.validate()?;
        if texts.len() != corpus.len() || corpus.documents.iter().zip(&texts).any(|(d, t)| d.id != t.doc_id) {
            return Err(EngineError::Corrupt("screening texts do not match the corpus".into()));
        }
        let state = ProjectState::new(project_id, config.clone(), corpus.ids().map(str::to_string));
        Ok(Self::assemble(state, Vec::new(), corpus.documents.clone(), texts, config.train.hash_bits))
    }

    fn assemble(
        state: ProjectState,
        events: Vec<LedgerEvent>,
        documents: Vec<Document>,
        texts: Vec<ScreeningText>,
        hash_bits: u32,
    ) -> Self {
        let features = FeatureStore::from_texts(Featurizer::new(hash_bits), &texts);
        let doc_index = documents.iter().enumerate().map(|(i, d)| (d.id.clone(), i)).collect();
        Project {
            state,
            events,
            documents: Arc::new(documents),
            texts: Arc::new(texts),
            doc_index: Arc::new(doc_index),
            features: Arc::new(features),
            model: None,
            predictions: None,
            store: None,
        }
    }

    /// Creates a project persisted under `dir`.
    pub fn create(
        dir: impl Into<PathBuf>,
        project_id: impl Into<String>,
        config: EngineConfig,
        corpus: &Corpus,
        texts: Vec<ScreeningText>,
    ) -> Result<Self> {
        let mut project = Project::new(project_id, config, corpus, texts)?;
        let stored = StoredConfig {
            project_id: project.state.project_id.clone(),
            config: project.state.config.clone(),
        };
        project.store = Some(ProjectStore::create(dir, &stored, &project.documents, &project.texts)?);
        Ok(project)
    }

    /// Reopens a persisted project by replaying its ledger.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let (store, snap) = ProjectStore::open(dir)?;
        let StoredConfig { project_id, config } = snap.stored;
        let state = ProjectState::replay(
            project_id,
            config.clone(),
            snap.documents.iter().map(|d| d.id.clone()),
            &snap.events,
        );
        let mut project = Self::assemble(state, snap.events, snap.documents, snap.texts, config.train.hash_bits);
        if project.state.model_version > 0 {
            let version = project.state.model_version;
            let preds = store
                .read_predictions(version)?
                .ok_or_else(|| EngineError::Corrupt(format!("predictions for model version {version} missing")))?;
            project.predictions = Some(Arc::new(PredictionSnapshot::new(version, &preds)));
        }
        project.store = Some(store);
        Ok(project)
    }

    pub fn state(&self) -> &ProjectState {
        &self.state
    }

    pub fn config(&self) -> &EngineConfig {
        &self.state.config
    }

    pub fn events(&self) -> &[LedgerEvent] {
        &self.events
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn document(&self, id: &str) -> Option<&Document> {
        self.doc_index.get(id).map(|&i| &self.documents[i])
    }

    pub fn text(&self, id: &str) -> Option<&ScreeningText> {
        self.doc_index.get(id).map(|&i| &self.texts[i])
    }

    pub fn model(&self) -> Option<&Arc<classifier::ClassifierModel>> {
        self.model.as_ref()
    }

    pub fn predictions(&self) -> Option<&Arc<PredictionSnapshot>> {
        self.predictions.as_ref()
    }

    /// Rebuilds state from the recorded events alone.
    pub fn replayed_state(&self) -> ProjectState {
        ProjectState::replay(
            self.state.project_id.clone(),
            self.state.config.clone(),
            self.documents.iter().map(|d| d.id.clone()),
            &self.events,
        )
    }

    fn emit(&mut self, event: LedgerEvent) -> Result<()> {
        if let Some(store) = self.store.as_mut() {
            store.append_event(&event)?;
            if let LedgerEvent::IterationCompleted(rec) = &event {
                store.append_iteration(rec)?;
            }
        }
        self.state.apply(&event);
        self.events.push(event);
        Ok(())
    }

    fn advance(&mut self, to: Phase) -> Result<()> {
        let from = self.state.phase;
        if to > from {
            self.emit(LedgerEvent::PhaseChanged { from, to })?;
        }
        Ok(())
    }

    fn require_phase(&self, expected: Phase) -> Result<()> {
        if self.state.phase != expected {
            return Err(EngineError::WrongPhase {
                expected,
                actual: self.state.phase,
            });
        }
        Ok(())
    }

    /// Issues `k` uniform-random unscreened documents as the initial batch.
    pub fn bootstrap(&mut self, k: usize) -> Result<BootstrapBatch> {
        self.require_phase(Phase::Bootstrapping)?;
        if k == 0 {
            return Err(EngineError::ZeroBatch);
        }
        if !self.state.issued.is_empty() {
            return Err(EngineError::AlreadyBootstrapped);
        }
        let pool: Vec<&String> = self.state.unscreened.iter().collect();
        let clamped = pool.len() < k;
        if clamped {
            tracing::warn!(requested = k, available = pool.len(), "corpus smaller than initial batch; issuing all");
        }
        let mut rng = derive_rng(self.state.config.seed, "bootstrap", 0);
        let ids: Vec<String> = rand::seq::index::sample(&mut rng, pool.len(), k.min(pool.len()))
            .into_iter()
            .map(|i| pool[i].clone())
            .collect();
        self.emit(LedgerEvent::BatchIssued {
            iteration: 0,
            ids: ids.clone(),
        })?;
        self.after_labels()?;
        Ok(BootstrapBatch { ids, clamped })
    }

    /// Records one decision. A later decision for the same document
    /// supersedes the earlier one; both stay in the ledger.
    pub fn record_label(&mut self, rec: LabelRecord) -> Result<LabelAck> {
        if !self.state.contains(&rec.doc_id) {
            return Err(EngineError::UnknownDocument(rec.doc_id));
        }
        let newly_screened = !self.state.screened.contains(&rec.doc_id);
        self.emit(LedgerEvent::Label(rec))?;
        self.after_labels()?;
        Ok(LabelAck {
            newly_screened,
            screened: self.state.screened.len(),
            identified: self.state.identified(),
            ledger_len: self.state.ledger_len,
        })
    }

    fn after_labels(&mut self) -> Result<()> {
        if self.state.unscreened.is_empty() {
            return self.advance(Phase::Done);
        }
        if self.state.phase == Phase::Bootstrapping && !self.state.issued.is_empty() && self.state.pending().is_empty() {
            self.advance(Phase::ActiveLearning)?;
        }
        Ok(())
    }

    pub fn pending(&self) -> Vec<String> {
        self.state.pending()
    }

    pub fn training_set(&self) -> TrainingSet {
        TrainingSet::from_pairs(self.state.effective.iter().map(|(id, l)| (id.clone(), *l)))
    }

    /// Captures everything a training round needs.
    pub fn prepare_iteration(&self) -> Result<IterationJob> {
        // an unfinished initial batch is reported as pending labels, not a phase error
        let pending = self.pending();
        if matches!(self.state.phase, Phase::Bootstrapping | Phase::ActiveLearning) && !pending.is_empty() {
            return Err(EngineError::PendingLabels(pending));
        }
        self.require_phase(Phase::ActiveLearning)?;
        let last_batch = self.state.batch_history.last().copied();
        Ok(IterationJob {
            index: self.state.iterations.len() as u32,
            base_version: self.state.model_version,
            ledger_len: self.state.ledger_len,
            training: self.training_set(),
            pool: self.state.unscreened.iter().cloned().collect(),
            previous: self.predictions.clone(),
            batch_included_count: last_batch.map_or(0, |b| b.included),
            batch_size: last_batch.map_or(0, |b| b.size),
            features: Arc::clone(&self.features),
            config: self.state.config.clone(),
        })
    }

    /// Installs a finished training round: new model, snapshot, stop verdict,
    /// and the next batch when training continues.
    pub fn commit_iteration(&mut self, outcome: IterationOutcome) -> Result<IterationRecord> {
        let job = &outcome.job;
        if self.state.model_version != job.base_version || self.state.phase != Phase::ActiveLearning {
            return Err(EngineError::StaleJob);
        }
        if self.state.ledger_len != job.ledger_len {
            tracing::debug!("labels arrived while training; sampling from the current pool");
        }
        let version = job.base_version + 1;
        let mut record = IterationRecord {
            index: job.index,
            strategy: self.state.config.strategy,
            sampled_ids: Vec::new(),
            training_size: job.training.len(),
            model_version: version,
            rank_similarity: outcome.rank_similarity,
            batch_included_count: job.batch_included_count,
            batch_size: job.batch_size,
            validation_f1: outcome.validation.map(|v| v.f1),
            stop_training: false,
        };
        let mut history = self.state.iterations.clone();
        history.push(record.clone());
        record.stop_training = self.state.config.stop.should_stop_training(&history);

        let binding_stop = record.stop_training && self.state.config.stop_mode == StopMode::Binding;
        if !binding_stop {
            let pool: Vec<Prediction> = outcome
                .snapshot
                .ranked
                .iter()
                .filter(|p| self.state.unscreened.contains(&p.doc_id))
                .cloned()
                .collect();
            let mut rng = derive_rng(self.state.config.seed, "sample", job.index);
            record.sampled_ids = sampling::sample(self.state.config.strategy, &pool, self.state.config.batch_size, &mut rng)?;
        }

        if let Some(store) = &self.store {
            store.write_predictions(version, &outcome.snapshot.ranked)?;
        }
        self.model = Some(Arc::clone(&outcome.model));
        self.predictions = Some(Arc::clone(&outcome.snapshot));
        self.emit(LedgerEvent::IterationCompleted(record.clone()))?;
        if record.sampled_ids.is_empty() {
            self.advance(Phase::PrioritizedScreening)?;
        } else {
            self.emit(LedgerEvent::BatchIssued {
                iteration: record.index + 1,
                ids: record.sampled_ids.clone(),
            })?;
        }
        self.after_labels()?;
        Ok(record)
    }

    /// Prepare, run and commit in one call.
    pub fn run_iteration(&mut self) -> Result<IterationRecord> {
        let job = self.prepare_iteration()?;
        let outcome = job.run()?;
        self.commit_iteration(outcome)
    }

    /// Human-confirmed move from active learning to prioritized screening.
    pub fn advance_to_prioritized(&mut self) -> Result<()> {
        self.require_phase(Phase::ActiveLearning)?;
        if self.predictions.is_none() {
            return Err(EngineError::NoModel);
        }
        self.advance(Phase::PrioritizedScreening)
    }

    /// Ends screening at the team's discretion.
    pub fn finish(&mut self) -> Result<()> {
        self.advance(Phase::Done)
    }

    /// Every unscreened document in descending priority order.
    pub fn prioritized_queue(&self) -> Result<Vec<String>> {
        self.require_phase(Phase::PrioritizedScreening)?;
        let snapshot = self.predictions.as_ref().ok_or(EngineError::NoModel)?;
        let mut queue: Vec<String> = snapshot
            .ranked
            .iter()
            .filter(|p| self.state.unscreened.contains(&p.doc_id))
            .map(|p| p.doc_id.clone())
            .collect();
        if queue.len() < self.state.unscreened.len() {
            let ranked: HashSet<&str> = queue.iter().map(String::as_str).collect();
            let unranked: Vec<String> = self
                .state
                .unscreened
                .iter()
                .filter(|id| !ranked.contains(id.as_str()))
                .cloned()
                .collect();
            queue.extend(unranked);
        }
        Ok(queue)
    }

    /// Documents a screener should see next, at most `limit`.
    pub fn next_batch(&mut self, limit: usize) -> Result<Vec<String>> {
        match self.state.phase {
            Phase::Bootstrapping => {
                if self.state.issued.is_empty() {
                    let k = self.state.config.init_size;
                    self.bootstrap(k)?;
                }
                Ok(self.pending().into_iter().take(limit).collect())
            }
            Phase::ActiveLearning => Ok(self.pending().into_iter().take(limit).collect()),
            Phase::PrioritizedScreening => {
                let mut q = self.prioritized_queue()?;
                q.truncate(limit);
                Ok(q)
            }
            Phase::Done => Ok(Vec::new()),
        }
    }

    pub fn advice(&self) -> Advice {
        let last_rho = self.state.iterations.last().and_then(|r| r.rank_similarity);
        let last_batch = self
            .state
            .batch_history
            .iter()
            .rev()
            .find(|b| b.phase == Phase::PrioritizedScreening)
            .or(self.state.batch_history.last());
        let stop_screening = last_batch
            .and_then(|b| should_stop_screening(b.included, b.size, self.state.config.min_inclusion_rate).ok())
            .unwrap_or(false);
        Advice {
            stop_training: self.state.config.stop.should_stop_training(&self.state.iterations),
            last_rank_similarity: last_rho,
            rho_threshold: self.state.config.stop.rho_threshold,
            stop_screening,
            last_batch_rate: last_batch.map(|b| b.rate()),
            min_inclusion_rate: self.state.config.min_inclusion_rate,
        }
    }

    /// Priority score of `id` under the current model, if scored.
    pub fn priority_of(&self, id: &str) -> Option<f64> {
        self.predictions.as_ref().and_then(|s| s.score(id))
    }

    pub fn features(&self) -> &Arc<FeatureStore> {
        &self.features
    }

    /// Labels of the screened documents as an oracle lookup.
    pub fn decisions(&self) -> HashMap<String, Label> {
        self.state.effective.iter().map(|(k, v)| (k.clone(), *v)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{default_filters, screening_texts};
    use chrono::{TimeZone, Utc};

    fn corpus(n: usize) -> (Corpus, Vec<ScreeningText>) {
        let docs = (0..n).map(|i| {
            let topic = if i % 4 == 0 { "irrigation maize yields" } else { "urban transport policy" };
            Document::new(format!("d{i:03}"), format!("Study {i}"), format!("We examine {topic} in region {i}."))
        });
        let corpus = Corpus::from_documents(docs).unwrap();
        let texts = screening_texts(&corpus, &default_filters()).unwrap();
        (corpus, texts)
    }

    fn label(id: &str, included: bool) -> LabelRecord {
        LabelRecord::new(id, Label::from_included(included), "tester", Utc.timestamp_opt(0, 0).unwrap())
    }

    fn truth(id: &str) -> bool {
        id[1..].parse::<usize>().unwrap() % 4 == 0
    }

    fn config() -> EngineConfig {
        EngineConfig {
            batch_size: 10,
            init_size: 20,
            stop_mode: StopMode::Binding,
            train: TrainConfig {
                hash_bits: 12,
                ..TrainConfig::default()
            },
            ..EngineConfig::default()
        }
    }

    #[test]
    fn bootstrap_rules() {
        let (c, t) = corpus(50);
        let mut p = Project::new("p", config(), &c, t.clone()).unwrap();
        let b = p.bootstrap(20).unwrap();
        assert_eq!(b.ids.len(), 20);
        assert!(!b.clamped);
        assert_eq!(b.ids.iter().collect::<HashSet<_>>().len(), 20);
        assert!(matches!(p.bootstrap(20), Err(EngineError::AlreadyBootstrapped)));

        let mut q = Project::new("p", config(), &c, t.clone()).unwrap();
        assert_eq!(q.bootstrap(20).unwrap(), b);

        let mut small = Project::new("p", config(), &c, t).unwrap();
        let all = small.bootstrap(500).unwrap();
        assert!(all.clamped);
        assert_eq!(all.ids.len(), 50);
    }

    #[test]
    fn label_supersede_and_unknown() {
        let (c, t) = corpus(10);
        let mut p = Project::new("p", config(), &c, t).unwrap();
        let a = p.record_label(label("d001", true)).unwrap();
        assert!(a.newly_screened);
        assert_eq!(a.screened, 1);
        let b = p.record_label(label("d001", false)).unwrap();
        assert!(!b.newly_screened);
        assert_eq!(b.screened, 1);
        assert_eq!(b.identified, 0);
        assert_eq!(p.events().len(), 2);
        assert!(matches!(p.record_label(label("nope", true)), Err(EngineError::UnknownDocument(_))));
        assert_eq!(p.state().screened.len() + p.state().unscreened.len(), 10);
    }

    #[test]
    fn full_loop_with_replay() {
        let (c, t) = corpus(120);
        let mut cfg = config();
        cfg.stop.rho_threshold = None;
        cfg.stop.max_training_size = Some(40);
        let mut p = Project::new("p", cfg, &c, t).unwrap();
        for id in p.bootstrap(20).unwrap().ids {
            p.record_label(label(&id, truth(&id))).unwrap();
        }
        assert_eq!(p.state().phase, Phase::ActiveLearning);
        assert!(matches!(p.prioritized_queue(), Err(EngineError::WrongPhase { .. })));

        let first = p.run_iteration().unwrap();
        assert_eq!(first.rank_similarity, None);
        assert_eq!(first.model_version, 1);
        assert_eq!(first.sampled_ids.len(), 10);
        assert!(matches!(p.run_iteration(), Err(EngineError::PendingLabels(ids)) if ids.len() == 10));
        for id in first.sampled_ids.clone() {
            p.record_label(label(&id, truth(&id))).unwrap();
        }
        let second = p.run_iteration().unwrap();
        assert!(second.rank_similarity.is_some());
        assert_eq!(second.model_version, 2);
        for id in second.sampled_ids.clone() {
            p.record_label(label(&id, truth(&id))).unwrap();
        }
        let third = p.run_iteration().unwrap();
        assert!(third.stop_training);
        assert!(third.sampled_ids.is_empty());
        assert_eq!(p.state().phase, Phase::PrioritizedScreening);

        let queue = p.prioritized_queue().unwrap();
        assert_eq!(queue.len(), p.state().unscreened.len());
        let scores: Vec<f64> = queue.iter().map(|id| p.priority_of(id).unwrap()).collect();
        assert!(scores.windows(2).all(|w| w[0] >= w[1]));
        for id in queue {
            p.record_label(label(&id, truth(&id))).unwrap();
        }
        assert_eq!(p.state().phase, Phase::Done);
        assert_eq!(p.replayed_state(), *p.state());
    }

    #[test]
    fn advisory_mode_keeps_sampling() {
        let (c, t) = corpus(80);
        let mut cfg = config();
        cfg.stop_mode = StopMode::Advisory;
        cfg.stop.rho_threshold = None;
        cfg.stop.max_iterations = Some(1);
        let mut p = Project::new("p", cfg, &c, t).unwrap();
        for id in p.bootstrap(20).unwrap().ids {
            p.record_label(label(&id, truth(&id))).unwrap();
        }
        let rec = p.run_iteration().unwrap();
        assert!(rec.stop_training);
        assert_eq!(rec.sampled_ids.len(), 10);
        assert_eq!(p.state().phase, Phase::ActiveLearning);
        assert!(p.advice().stop_training);
        p.advance_to_prioritized().unwrap();
        assert_eq!(p.state().phase, Phase::PrioritizedScreening);
    }

    #[test]
    fn stale_job_is_rejected() {
        let (c, t) = corpus(80);
        let mut p = Project::new("p", config(), &c, t).unwrap();
        for id in p.bootstrap(20).unwrap().ids {
            p.record_label(label(&id, truth(&id))).unwrap();
        }
        let a = p.prepare_iteration().unwrap().run().unwrap();
        let b = p.prepare_iteration().unwrap().run().unwrap();
        p.commit_iteration(a).unwrap();
        assert!(matches!(p.commit_iteration(b), Err(EngineError::StaleJob)));
    }

    #[test]
    fn persisted_project_reopens() {
        let dir = tempfile::tempdir().unwrap();
        let (c, t) = corpus(60);
        let mut p = Project::create(dir.path().join("p1"), "p1", config(), &c, t).unwrap();
        for id in p.bootstrap(20).unwrap().ids {
            p.record_label(label(&id, truth(&id))).unwrap();
        }
        p.run_iteration().unwrap();
        let reopened = Project::open(dir.path().join("p1")).unwrap();
        assert_eq!(reopened.state(), p.state());
        assert_eq!(reopened.predictions().unwrap().ranked, p.predictions().unwrap().ranked);
        assert_eq!(reopened.pending(), p.pending());
    }

    #[test]
    fn config_validation() {
        let mut cfg = EngineConfig::default();
        cfg.batch_size = 0;
        assert!(matches!(
            cfg.validate(),
            Err(EngineError::InvalidConfig { field: "batch_size", .. })
        ));
    }
}
