//! Replays fully labeled corpora with an oracle screener.
//!
//! Each experiment cell (strategy x training size x seed) drives a fresh
//! in-memory [`Project`]: a random initial batch, active-learning batches
//! under the cell's strategy until the training size is reached, then
//! prioritized screening of everything left. The oracle answers every label
//! request instantly and correctly, so the resulting HE/IR curves are exact.

mod report;
mod synthetic;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use report::{read_summary, write_report, ExperimentSummary, REPORT_SUMMARY_FILE};
pub use synthetic::{generate_synthetic_corpus, SyntheticSpec};

use crate::classifier::{self, F1Report, FeatureStore, Featurizer, Label, TrainConfig, TrainingSet};
use crate::corpus::{self, Corpus, CorpusError, Format, ScreeningText};
use crate::engine::{EngineConfig, EngineError, LabelRecord, Phase, Project, StopMode, StopRule};
use crate::metrics::{self, EffortSaved, HeIrCurve, MetricsError};
use crate::sampling::StrategyKind;

#[derive(Debug, Error)]
pub enum SimulatorError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("document {0} has no oracle label")]
    MissingTruth(String),
    #[error("no results found in {0}")]
    NoResults(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Classifier(#[from] classifier::ClassifierError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, SimulatorError>;

/// A corpus with a known decision for every document.
#[derive(Debug, Clone)]
pub struct OracleCorpus {
    pub corpus: Corpus,
    pub texts: Vec<ScreeningText>,
    pub truth: HashMap<String, Label>,
    pub n_included: usize,
}

impl OracleCorpus {
    pub fn new(corpus: Corpus, texts: Vec<ScreeningText>, truth: HashMap<String, Label>) -> Result<Self> {
        for id in corpus.ids() {
            if !truth.contains_key(id) {
                return Err(SimulatorError::MissingTruth(id.to_string()));
            }
        }
        let n_included = corpus.ids().filter(|id| truth[*id] == Label::Included).count();
        if n_included == 0 {
            return Err(SimulatorError::InvalidParameter("corpus has no included documents".into()));
        }
        Ok(OracleCorpus {
            corpus,
            texts,
            truth,
            n_included,
        })
    }

    pub fn len(&self) -> usize {
        self.corpus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.corpus.is_empty()
    }

    pub fn prevalence(&self) -> f64 {
        self.n_included as f64 / self.len() as f64
    }
}

fn parse_included(raw: &str) -> Option<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "included" | "include" => Some(true),
        "0" | "false" | "no" | "excluded" | "exclude" => Some(false),
        _ => None,
    }
}

/// Loads a labeled corpus: the ordinary ingestion columns plus `included`
/// (`1`/`0`, `true`/`false`, `included`/`excluded`).
pub fn load_oracle_corpus(path: impl AsRef<Path>, format: Format) -> Result<OracleCorpus> {
    let path = path.as_ref();
    let corpus = corpus::ingest(path, format)?;
    let mut truth = HashMap::new();
    let bad = |id: &str| SimulatorError::InvalidParameter(format!("bad or missing `included` value for {id}"));
    match format {
        Format::Csv => {
            let mut rdr = csv::Reader::from_path(path)?;
            let headers = rdr.headers()?.clone();
            let id_c = headers.iter().position(|h| h.trim() == "id").expect("ingest checked id");
            let inc_c = headers
                .iter()
                .position(|h| h.trim() == "included")
                .ok_or_else(|| CorpusError::MissingColumn("included".into()))?;
            for row in rdr.records() {
                let row = row?;
                let id = row.get(id_c).unwrap_or("").trim().to_string();
                let v = row.get(inc_c).and_then(parse_included).ok_or_else(|| bad(&id))?;
                truth.entry(id).or_insert(Label::from_included(v));
            }
        }
        Format::Jsonl => {
            for line in std::fs::read_to_string(path)?.lines().filter(|l| !l.trim().is_empty()) {
                let v: serde_json::Value = serde_json::from_str(line)?;
                let id = v["id"].as_str().unwrap_or("").trim().to_string();
                let inc = match &v["included"] {
                    serde_json::Value::Bool(b) => Some(*b),
                    serde_json::Value::Number(n) => n.as_u64().map(|n| n == 1),
                    serde_json::Value::String(s) => parse_included(s),
                    _ => None,
                }
                .ok_or_else(|| bad(&id))?;
                truth.entry(id).or_insert(Label::from_included(inc));
            }
        }
    }
    let texts = corpus::screening_texts(&corpus, &corpus::default_filters())?;
    OracleCorpus::new(corpus, texts, truth)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub strategies: Vec<StrategyKind>,
    pub training_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub target_ir: f64,
    pub batch_size: usize,
    pub init_size: usize,
    pub train: TrainConfig,
    pub ensemble_runs: usize,
}

impl Default for ExperimentConfig {
    /// Desk-scale defaults.
    fn default() -> Self {
        ExperimentConfig {
            strategies: StrategyKind::ALL.to_vec(),
            training_sizes: vec![500, 1000, 2000],
            seeds: vec![1, 2, 3, 4, 5],
            target_ir: 0.8,
            batch_size: 250,
            init_size: 500,
            train: TrainConfig::default(),
            ensemble_runs: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SimulatorError::InvalidConfig(m.to_string()));
        if self.strategies.is_empty() || self.training_sizes.is_empty() || self.seeds.is_empty() {
            return bad("strategies, training_sizes and seeds must be non-empty");
        }
        if self.training_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return bad("training_sizes must be strictly ascending");
        }
        if self.training_sizes[0] < self.init_size {
            return bad("training sizes must be at least init_size");
        }
        if !(self.target_ir > 0.0 && self.target_ir <= 1.0) {
            return bad("target_ir must lie in (0, 1]");
        }
        if self.batch_size == 0 || self.init_size == 0 {
            return bad("batch_size and init_size must be positive");
        }
        Ok(())
    }

    fn engine_config(&self, strategy: StrategyKind, training_size: usize, seed: u64) -> EngineConfig {
        EngineConfig {
            strategy,
            batch_size: self.batch_size,
            init_size: self.init_size,
            stop: StopRule {
                rho_threshold: None,
                patience: 1,
                max_iterations: None,
                max_training_size: Some(training_size),
            },
            stop_mode: StopMode::Binding,
            ensemble_runs: self.ensemble_runs,
            train: self.train,
            seed,
            ..EngineConfig::default()
        }
    }
}

/// Outcome of one strategy x size x seed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub strategy: StrategyKind,
    pub training_size: usize,
    pub seed: u64,
    /// Labels collected before prioritized screening began.
    pub labels_before_prioritized: usize,
    pub iterations: usize,
    pub he_at_target: Option<f64>,
    /// F1 of the final model on its validation split.
    pub validation_f1: Option<f64>,
    /// F1 of the final model over every document it ranked for prioritized
    /// screening; absent when that pool holds no included document.
    pub pool_f1: Option<f64>,
    /// Mean included fraction of active-learning batches (excludes the initial batch).
    pub al_included_fraction: Option<f64>,
    #[serde(skip)]
    pub curve: Option<HeIrCurve>,
}

impl CellResult {
    pub fn key(&self) -> String {
        format!("{}_{}_{}", self.strategy, self.training_size, self.seed)
    }
}

fn oracle_label(id: &str, label: Label, seq: usize, iteration: u32) -> LabelRecord {
    let ts: DateTime<Utc> = DateTime::from_timestamp(seq as i64, 0).expect("in range");
    let mut rec = LabelRecord::new(id, label, "oracle", ts);
    rec.iteration = iteration;
    rec
}

/// Labels `ids` from the oracle in order.
pub fn screen_with_oracle(project: &mut Project, oracle: &OracleCorpus, ids: &[String]) -> Result<()> {
    let iteration = project.state().iterations.len() as u32;
    for id in ids {
        let label = *oracle.truth.get(id).ok_or_else(|| SimulatorError::MissingTruth(id.clone()))?;
        let seq = project.state().ledger_len;
        project.record_label(oracle_label(id, label, seq, iteration))?;
    }
    Ok(())
}

/// Runs one cell to completion and returns the finished project with its result.
pub fn run_cell_project(
    oracle: &OracleCorpus,
    config: &ExperimentConfig,
    strategy: StrategyKind,
    training_size: usize,
    seed: u64,
) -> Result<(Project, CellResult)> {
    let engine_cfg = config.engine_config(strategy, training_size, seed);
    let mut project = Project::new(
        format!("{strategy}_{training_size}_{seed}"),
        engine_cfg,
        &oracle.corpus,
        oracle.texts.clone(),
    )?;
    let initial = project.bootstrap(config.init_size)?;
    screen_with_oracle(&mut project, oracle, &initial.ids)?;
    while project.state().phase == Phase::ActiveLearning {
        let rec = project.run_iteration()?;
        screen_with_oracle(&mut project, oracle, &rec.sampled_ids)?;
    }
    let labels_before_prioritized = project.state().screened.len();

    let mut pool_f1 = None;
    if project.state().phase == Phase::PrioritizedScreening {
        let queue = project.prioritized_queue()?;
        // undefined when the pool holds no included documents
        let report = F1Report::from_scores(
            queue
                .iter()
                .map(|id| (project.priority_of(id).unwrap_or(0.0), oracle.truth[id])),
            project.config().f1_threshold,
        );
        pool_f1 = (report.tp + report.fn_ > 0).then_some(report.f1);
        screen_with_oracle(&mut project, oracle, &queue)?;
    }

    let curve = metrics::build_curve(
        &project.state().screening_order,
        &oracle.truth,
        oracle.len(),
        oracle.n_included,
    )?;
    let al_batches: Vec<f64> = project
        .state()
        .batch_history
        .iter()
        .filter(|b| b.phase == Phase::ActiveLearning)
        .map(|b| b.rate())
        .collect();
    let result = CellResult {
        strategy,
        training_size,
        seed,
        labels_before_prioritized,
        iterations: project.state().iterations.len(),
        he_at_target: metrics::he_at_target(&curve, config.target_ir).ok(),
        validation_f1: project.state().iterations.last().and_then(|r| r.validation_f1),
        pool_f1,
        al_included_fraction: (!al_batches.is_empty()).then(|| al_batches.iter().sum::<f64>() / al_batches.len() as f64),
        curve: Some(curve),
    };
    Ok((project, result))
}

pub fn run_cell(
    oracle: &OracleCorpus,
    config: &ExperimentConfig,
    strategy: StrategyKind,
    training_size: usize,
    seed: u64,
) -> Result<CellResult> {
    run_cell_project(oracle, config, strategy, training_size, seed).map(|(_, r)| r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub config: ExperimentConfig,
    pub n: usize,
    pub n_included: usize,
    pub cells: Vec<CellResult>,
}

/// Runs every cell, in parallel; results are ordered strategy, size, seed.
pub fn run_experiment(oracle: &OracleCorpus, config: &ExperimentConfig) -> Result<ExperimentResults> {
    config.validate()?;
    let grid: Vec<(StrategyKind, usize, u64)> = config
        .strategies
        .iter()
        .flat_map(|&s| {
            config
                .training_sizes
                .iter()
                .flat_map(move |&size| config.seeds.iter().map(move |&seed| (s, size, seed)))
        })
        .collect();
    let cells = grid
        .par_iter()
        .map(|&(s, size, seed)| run_cell(oracle, config, s, size, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentResults {
        config: config.clone(),
        n: oracle.len(),
        n_included: oracle.n_included,
        cells,
    })
}

/// Mean and standard error; the error is absent for fewer than two values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: Option<f64>,
    pub count: usize,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Option<MeanSe> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let se = (values.len() >= 2).then(|| {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        });
        Some(MeanSe {
            mean,
            se,
            count: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSummary {
    pub training_size: usize,
    pub he_at_target: Option<MeanSe>,
    /// Seeds whose curve never reached the target.
    pub unreached: usize,
    pub validation_f1: Option<MeanSe>,
    pub pool_f1: Option<MeanSe>,
    pub al_included_fraction: Option<MeanSe>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub strategy: StrategyKind,
    pub best_training_size: Option<usize>,
    pub he_at_target: Option<MeanSe>,
    /// No training size reached the target on every seed; excluded from savings.
    pub flagged: bool,
    pub saved_vs_no_ml: Option<EffortSaved>,
    pub sizes: Vec<SizeSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseSaving {
    pub strategy: StrategyKind,
    pub baseline: StrategyKind,
    pub saved: EffortSaved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub target_ir: f64,
    /// Effort needed without any model: screening in random order reaches
    /// IR t at HE t in expectation.
    pub no_ml_he: f64,
    pub rows: Vec<StrategyRow>,
    pub pairwise: Vec<PairwiseSaving>,
}

fn summarize_size(cells: &[&CellResult], size: usize) -> SizeSummary {
    let at: Vec<&&CellResult> = cells.iter().filter(|c| c.training_size == size).collect();
    let collect = |f: &dyn Fn(&CellResult) -> Option<f64>| MeanSe::of(&at.iter().filter_map(|c| f(c)).collect::<Vec<_>>());
    SizeSummary {
        training_size: size,
        he_at_target: collect(&|c| c.he_at_target),
        unreached: at.iter().filter(|c| c.he_at_target.is_none()).count(),
        validation_f1: collect(&|c| c.validation_f1),
        pool_f1: collect(&|c| c.pool_f1),
        al_included_fraction: collect(&|c| c.al_included_fraction),
    }
}

/// Per-strategy summary: best training size by mean HE at target, savings
/// against the no-model diagonal and against every other strategy.
pub fn compare_strategies(results: &ExperimentResults) -> ComparisonTable {
    let target = results.config.target_ir;
    let mut by_strategy: BTreeMap<StrategyKind, Vec<&CellResult>> = BTreeMap::new();
    for c in &results.cells {
        by_strategy.entry(c.strategy).or_default().push(c);
    }
    let rows: Vec<StrategyRow> = results
        .config
        .strategies
        .iter()
        .filter_map(|s| by_strategy.get(s).map(|cells| (*s, cells)))
        .map(|(strategy, cells)| {
            let sizes: Vec<SizeSummary> = results
                .config
                .training_sizes
                .iter()
                .map(|&size| summarize_size(cells, size))
                .collect();
            let best = sizes
                .iter()
                .filter(|s| s.unreached == 0)
                .filter_map(|s| s.he_at_target.map(|h| (s.training_size, h)))
                .min_by(|a, b| a.1.mean.total_cmp(&b.1.mean).then(a.0.cmp(&b.0)));
            StrategyRow {
                strategy,
                best_training_size: best.map(|b| b.0),
                he_at_target: best.map(|b| b.1),
                flagged: best.is_none(),
                saved_vs_no_ml: best.and_then(|b| metrics::effort_saved(target, b.1.mean).ok()),
                sizes,
            }
        })
        .collect();
    let mut pairwise = Vec::new();
    for a in rows.iter().filter(|r| !r.flagged) {
        for b in rows.iter().filter(|r| !r.flagged && r.strategy != a.strategy) {
            let (ha, hb) = (a.he_at_target.expect("unflagged").mean, b.he_at_target.expect("unflagged").mean);
            if let Ok(saved) = metrics::effort_saved(hb, ha) {
                pairwise.push(PairwiseSaving {
                    strategy: a.strategy,
                    baseline: b.strategy,
                    saved,
                });
            }
        }
    }
    ComparisonTable {
        target_ir: target,
        no_ml_he: target,
        rows,
        pairwise,
    }
}

/// HE at `target_ir` when the whole corpus is screened in a uniformly random
/// order, one value per seed. The empirical check on the no-model diagonal.
pub fn random_order_he(oracle: &OracleCorpus, seeds: &[u64], target_ir: f64) -> Result<Vec<f64>> {
    let ids: Vec<&str> = oracle.corpus.ids().collect();
    seeds
        .iter()
        .map(|&seed| {
            let mut order = ids.clone();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let curve = metrics::build_curve(&order, &oracle.truth, oracle.len(), oracle.n_included)?;
            Ok(metrics::he_at_target(&curve, target_ir)?)
        })
        .collect()
}

/// One-shot evaluation: label a random subset, train once on 85% of it, and
/// screen the held-out 15% in descending priority order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutResult {
    pub subset_size: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub he_at_target: Option<f64>,
    pub f1: F1Report,
    #[serde(skip)]
    pub curve: Option<HeIrCurve>,
}

pub fn holdout_eval(
    oracle: &OracleCorpus,
    subset_size: usize,
    train_cfg: &TrainConfig,
    target_ir: f64,
    seed: u64,
) -> Result<HoldoutResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<&str> = oracle.corpus.ids().collect();
    let picked: Vec<&str> = rand::seq::index::sample(&mut rng, ids.len(), subset_size.min(ids.len()))
        .into_iter()
        .map(|i| ids[i])
        .collect();
    let subset = TrainingSet::from_pairs(picked.iter().map(|id| (id.to_string(), oracle.truth[*id])));
    let (train, test) = classifier::split_train_val(&subset, 0.85, &mut rng)?;
    let balanced = classifier::oversample(&train, &mut rng)?;
    let store = FeatureStore::from_texts(Featurizer::new(train_cfg.hash_bits), &oracle.texts);
    let model = classifier::train(&balanced, &store, &TrainConfig { seed, ..*train_cfg })?;
    let test_ids: Vec<&str> = test.items.iter().map(|i| i.doc_id.as_str()).collect();
    let preds = classifier::predict_ids(&model, &store, &test_ids)?;
    let f1 = F1Report::from_scores(preds.iter().zip(&test.items).map(|(p, i)| (p.priority_score, i.label)), 0.5);
    let order: Vec<&str> = classifier::rank_by_priority(&preds).iter().map(|p| p.doc_id.as_str()).collect();
    let test_included = test.class_counts().1;
    let (he, curve) = if test_included > 0 {
        let truth: HashMap<String, Label> = test.items.iter().map(|i| (i.doc_id.clone(), i.label)).collect();
        let curve = metrics::build_curve(&order, &truth, order.len(), test_included)?;
        (metrics::he_at_target(&curve, target_ir).ok(), Some(curve))
    } else {
        (None, None)
    };
    Ok(HoldoutResult {
        subset_size: picked.len(),
        train_size: train.len(),
        test_size: test.len(),
        he_at_target: he,
        f1,
        curve,
    })
}
