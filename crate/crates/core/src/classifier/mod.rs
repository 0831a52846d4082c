//! Binary relevance classification.
//!
//! Class 1 is "included", class 0 "excluded". Every model emits a pair of
//! logits per document; the priority score is the normalized-exponential
//! probability of class 1 and the uncertainty is one minus the larger of the
//! two class probabilities.
//!
//! The reference model is a two-output linear layer over hashed word 1-2-gram
//! features, trained by plain SGD on softmax cross-entropy. Models hosted
//! elsewhere plug in through [`adapter::AdapterConfig`].

pub mod adapter;
pub mod features;

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ScreeningText;
pub use adapter::{AdapterConfig, EncoderNotes};
pub use features::{FeatureStore, Featurizer, SparseVec};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("non-finite logits ({0}, {1})")]
    NonFinite(f64, f64),
    #[error("cannot balance single-class set")]
    SingleClass,
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("need at least 2 items to split, got {0}")]
    TooSmallToSplit(usize),
    #[error("split fraction {0} outside (0, 1)")]
    BadFraction(f64),
    #[error("no text for document {0}")]
    MissingText(String),
    #[error("model is not trained")]
    Untrained,
    #[error("external adapter: {0}")]
    Adapter(String),
}

pub type Result<T> = std::result::Result<T, ClassifierError>;

pub type Logits = [f64; 2];

fn check_finite(logits: Logits) -> Result<()> {
    if logits.iter().all(|l| l.is_finite()) {
        Ok(())
    } else {
        Err(ClassifierError::NonFinite(logits[0], logits[1]))
    }
}

/// Probability of the included class, `exp(l1) / (exp(l0) + exp(l1))`,
/// evaluated after subtracting the larger logit.
pub fn priority_score(logits: Logits) -> Result<f64> {
    check_finite(logits)?;
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    Ok(e1 / (e0 + e1))
}

/// `1 - max(p0, p1)`. For two classes this is `min(ps, 1 - ps)`, which is the
/// form evaluated so the identity holds bit-for-bit.
pub fn uncertainty(logits: Logits) -> Result<f64> {
    let ps = priority_score(logits)?;
    Ok(uncertainty_of(ps))
}

fn uncertainty_of(ps: f64) -> f64 {
    ps.min(1.0 - ps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub doc_id: String,
    pub logits: Logits,
    pub priority_score: f64,
    pub uncertainty: f64,
}

impl Prediction {
    pub fn from_logits(doc_id: impl Into<String>, logits: Logits) -> Result<Self> {
        let ps = priority_score(logits)?;
        Ok(Prediction {
            doc_id: doc_id.into(),
            logits,
            priority_score: ps,
            uncertainty: uncertainty_of(ps),
        })
    }

    /// Prediction carrying a given priority score; logits are the log-probabilities.
    pub fn from_score(doc_id: impl Into<String>, ps: f64) -> Self {
        Prediction {
            doc_id: doc_id.into(),
            logits: [(1.0 - ps).ln(), ps.ln()],
            priority_score: ps,
            uncertainty: uncertainty_of(ps),
        }
    }
}

/// Pools several prediction runs over the same documents by averaging the
/// priority score per document. Output follows the order of the first run.
pub fn mean_predictions(runs: &[Vec<Prediction>]) -> Vec<Prediction> {
    let Some(first) = runs.first() else {
        return Vec::new();
    };
    if runs.len() == 1 {
        return first.clone();
    }
    let mut sums: HashMap<&str, (f64, usize)> = HashMap::new();
    for p in runs.iter().flatten() {
        let e = sums.entry(p.doc_id.as_str()).or_default();
        e.0 += p.priority_score;
        e.1 += 1;
    }
    first
        .iter()
        .map(|p| {
            let (sum, n) = sums[p.doc_id.as_str()];
            Prediction::from_score(p.doc_id.clone(), sum / n as f64)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Excluded,
    Included,
}

impl Label {
    pub fn class_index(self) -> usize {
        match self {
            Label::Excluded => 0,
            Label::Included => 1,
        }
    }

    pub fn from_included(included: bool) -> Self {
        if included {
            Label::Included
        } else {
            Label::Excluded
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledItem {
    pub doc_id: String,
    pub label: Label,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub items: Vec<LabeledItem>,
}

impl TrainingSet {
    pub fn new(items: Vec<LabeledItem>) -> Self {
        TrainingSet { items }
    }

    pub fn from_pairs<S: Into<String>>(pairs: impl IntoIterator<Item = (S, Label)>) -> Self {
        TrainingSet {
            items: pairs
                .into_iter()
                .map(|(doc_id, label)| LabeledItem {
                    doc_id: doc_id.into(),
                    label,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// `(excluded, included)` counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let inc = self.items.iter().filter(|i| i.label == Label::Included).count();
        (self.items.len() - inc, inc)
    }

    /// Stable digest of the (id, label) multiset, independent of item order.
    pub fn fingerprint(&self) -> String {
        let mut lines: Vec<String> = self
            .items
            .iter()
            .map(|i| format!("{}\t{}", i.doc_id, i.label.class_index()))
            .collect();
        lines.sort_unstable();
        format!("{:016x}", features::fnv1a(lines.join("\n").as_bytes()))
    }
}

/// Duplicates minority-class items, drawn with replacement, until both class
/// counts match. Originals keep their positions; copies are appended.
pub fn oversample<R: Rng + ?Sized>(set: &TrainingSet, rng: &mut R) -> Result<TrainingSet> {
    let (neg, pos) = set.class_counts();
    if neg == 0 || pos == 0 {
        return Err(ClassifierError::SingleClass);
    }
    let minority = if pos < neg { Label::Included } else { Label::Excluded };
    let deficit = neg.abs_diff(pos);
    let pool: Vec<&LabeledItem> = set.items.iter().filter(|i| i.label == minority).collect();
    let mut items = set.items.clone();
    items.extend((0..deficit).map(|_| (*pool.choose(rng).expect("non-empty minority")).clone()));
    Ok(TrainingSet { items })
}

/// Random partition with `round(fraction * n)` items on the training side,
/// clamped so neither side is empty.
pub fn split_train_val<R: Rng + ?Sized>(
    set: &TrainingSet,
    fraction: f64,
    rng: &mut R,
) -> Result<(TrainingSet, TrainingSet)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(ClassifierError::BadFraction(fraction));
    }
    let n = set.len();
    if n < 2 {
        return Err(ClassifierError::TooSmallToSplit(n));
    }
    let n_train = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let pick = |range: &[usize]| TrainingSet {
        items: range.iter().map(|&i| set.items[i].clone()).collect(),
    };
    Ok((pick(&idx[..n_train]), pick(&idx[n_train..])))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub hash_bits: u32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            learning_rate: 0.1,
            hash_bits: 18,
            seed: 0,
        }
    }
}

/// Two-output linear layer: `logit_k = bias_k + sum_j w[j][k] * x_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    pub hash_bits: u32,
    /// Row-major `[dimension][2]`.
    pub weights: Vec<f64>,
    pub bias: [f64; 2],
}

impl LinearParams {
    fn zeros(hash_bits: u32) -> Self {
        LinearParams {
            hash_bits,
            weights: vec![0.0; 2 << hash_bits],
            bias: [0.0; 2],
        }
    }

    pub fn logits(&self, x: &SparseVec) -> Logits {
        let mut z = self.bias;
        for (j, v) in x.iter() {
            z[0] += self.weights[2 * j] * v;
            z[1] += self.weights[2 * j + 1] * v;
        }
        z
    }

    fn sgd_step(&mut self, x: &SparseVec, label: Label, lr: f64) {
        let z = self.logits(x);
        let m = z[0].max(z[1]);
        let e = [(z[0] - m).exp(), (z[1] - m).exp()];
        let s = e[0] + e[1];
        let y = label.class_index();
        let grad = [e[0] / s - (y == 0) as u8 as f64, e[1] / s - (y == 1) as u8 as f64];
        for (j, v) in x.iter() {
            self.weights[2 * j] -= lr * grad[0] * v;
            self.weights[2 * j + 1] -= lr * grad[1] * v;
        }
        self.bias[0] -= lr * grad[0];
        self.bias[1] -= lr * grad[1];
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelParams {
    ReferenceLinear(LinearParams),
    ExternalAdapter(AdapterConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    ReferenceLinear,
    ExternalAdapter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub params: Option<ModelParams>,
    pub version: u64,
    pub trained_on: Option<String>,
}

impl ClassifierModel {
    pub fn untrained() -> Self {
        ClassifierModel {
            params: None,
            version: 0,
            trained_on: None,
        }
    }

    /// Wraps an externally trained model served over the adapter protocol.
    pub fn external(config: AdapterConfig, version: u64) -> Self {
        ClassifierModel {
            params: Some(ModelParams::ExternalAdapter(config)),
            version,
            trained_on: None,
        }
    }

    pub fn kind(&self) -> Option<ModelKind> {
        self.params.as_ref().map(|p| match p {
            ModelParams::ReferenceLinear(_) => ModelKind::ReferenceLinear,
            ModelParams::ExternalAdapter(_) => ModelKind::ExternalAdapter,
        })
    }

    pub fn is_trained(&self) -> bool {
        self.params.is_some()
    }

    pub fn with_version(mut self, version: u64) -> Self {
        self.version = version;
        self
    }
}

/// Fits the reference linear model. Items are visited in a seeded shuffled
/// order each epoch, so identical inputs and seed give identical parameters.
pub fn train(set: &TrainingSet, store: &FeatureStore, config: &TrainConfig) -> Result<ClassifierModel> {
    if set.is_empty() {
        return Err(ClassifierError::EmptyTrainingSet);
    }
    let (neg, pos) = set.class_counts();
    if neg == 0 || pos == 0 {
        return Err(ClassifierError::SingleClass);
    }
    let rows: Vec<(&SparseVec, Label)> = set
        .items
        .iter()
        .map(|i| {
            store
                .get(&i.doc_id)
                .map(|x| (x, i.label))
                .ok_or_else(|| ClassifierError::MissingText(i.doc_id.clone()))
        })
        .collect::<Result<_>>()?;

    let hash_bits = store.featurizer().hash_bits;
    let mut params = LinearParams::zeros(hash_bits);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let (x, label) = rows[i];
            params.sgd_step(x, label, config.learning_rate);
        }
    }
    Ok(ClassifierModel {
        params: Some(ModelParams::ReferenceLinear(params)),
        version: 1,
        trained_on: Some(set.fingerprint()),
    })
}

/// Featurizes and scores texts; output order matches input order.
pub fn predict(model: &ClassifierModel, texts: &[&ScreeningText]) -> Result<Vec<Prediction>> {
    match &model.params {
        None => Err(ClassifierError::Untrained),
        Some(ModelParams::ExternalAdapter(cfg)) => cfg.predict(texts),
        Some(ModelParams::ReferenceLinear(p)) => {
            let featurizer = Featurizer::new(p.hash_bits);
            texts
                .par_iter()
                .map(|t| Prediction::from_logits(t.doc_id.clone(), p.logits(&featurizer.featurize(&t.text))))
                .collect()
        }
    }
}

/// Scores documents whose features are already in `store`.
pub fn predict_ids(model: &ClassifierModel, store: &FeatureStore, ids: &[&str]) -> Result<Vec<Prediction>> {
    match &model.params {
        None => Err(ClassifierError::Untrained),
        Some(ModelParams::ExternalAdapter(_)) => Err(ClassifierError::Adapter(
            "external models score raw texts; use predict()".into(),
        )),
        Some(ModelParams::ReferenceLinear(p)) => ids
            .par_iter()
            .map(|id| {
                let x = store.get(id).ok_or_else(|| ClassifierError::MissingText(id.to_string()))?;
                Prediction::from_logits(id.to_string(), p.logits(x))
            })
            .collect(),
    }
}

/// Confusion counts and F1 of the included class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    /// Precision + recall was zero, so F1 is reported as 0 by convention.
    pub degenerate: bool,
}

impl F1Report {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let degenerate = precision + recall == 0.0;
        let f1 = if degenerate {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        F1Report {
            f1,
            precision,
            recall,
            tp,
            fp,
            fn_,
            tn,
            degenerate,
        }
    }

    /// Scores at or above `threshold` count as included.
    pub fn from_scores(pairs: impl IntoIterator<Item = (f64, Label)>, threshold: f64) -> Self {
        let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
        for (ps, truth) in pairs {
            match (ps >= threshold, truth == Label::Included) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
        F1Report::from_counts(tp, fp, fn_, tn)
    }
}

pub fn evaluate_f1(
    model: &ClassifierModel,
    labeled: &TrainingSet,
    store: &FeatureStore,
    threshold: f64,
) -> Result<F1Report> {
    let ids: Vec<&str> = labeled.items.iter().map(|i| i.doc_id.as_str()).collect();
    let preds = predict_ids(model, store, &ids)?;
    Ok(F1Report::from_scores(
        preds.iter().zip(&labeled.items).map(|(p, i)| (p.priority_score, i.label)),
        threshold,
    ))
}

/// Ranks predictions by descending priority score, ascending id on ties.
pub fn rank_by_priority(preds: &[Prediction]) -> Vec<&Prediction> {
    let mut v: Vec<&Prediction> = preds.iter().collect();
    v.sort_by(|a, b| {
        b.priority_score
            .total_cmp(&a.priority_score)
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    });
    v
}

/// Lookup from id to prediction, for callers holding a full prediction snapshot.
pub fn index_predictions(preds: &[Prediction]) -> BTreeMap<&str, &Prediction> {
    preds.iter().map(|p| (p.doc_id.as_str(), p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn priority_score_examples() {
        assert_eq!(priority_score([0.0, 0.0]).unwrap(), 0.5);
        // 1 / (1 + e^-4) = 0.98201379003790845...
        assert!((priority_score([0.0, 4.0]).unwrap() - 0.982_013_790_037_908_5).abs() < 1e-15);
        assert!((priority_score([4.0, 0.0]).unwrap() - 0.017_986_209_962_091_56).abs() < 1e-15);
        assert!(priority_score([f64::NAN, 0.0]).is_err());
        assert!(priority_score([0.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn uncertainty_examples() {
        assert_eq!(uncertainty([0.0, 0.0]).unwrap(), 0.5);
        assert!((uncertainty([0.0, 4.0]).unwrap() - 0.017_986_209_962_091_56).abs() < 1e-12);
        assert!(uncertainty([f64::NEG_INFINITY, 1.0]).is_err());
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let ps = priority_score([1000.0, 1001.0]).unwrap();
        assert!((ps - priority_score([0.0, 1.0]).unwrap()).abs() < 1e-15);
    }

    fn set(pos: usize, neg: usize) -> TrainingSet {
        TrainingSet::from_pairs(
            (0..pos)
                .map(|i| (format!("p{i}"), Label::Included))
                .chain((0..neg).map(|i| (format!("n{i}"), Label::Excluded))),
        )
    }

    #[test]
    fn oversample_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = oversample(&set(3, 9), &mut rng).unwrap();
        assert_eq!(out.class_counts(), (9, 9));
        assert_eq!(&out.items[..12], &set(3, 9).items[..]);

        let balanced = set(5, 5);
        assert_eq!(oversample(&balanced, &mut rng).unwrap(), balanced);

        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let out = oversample(&set(1, 1000), &mut rng).unwrap();
        assert_eq!(out.class_counts(), (1000, 1000));
        assert!(out
            .items
            .iter()
            .filter(|i| i.label == Label::Included)
            .all(|i| i.doc_id == "p0"));

        let err = oversample(&set(0, 4), &mut rng).unwrap_err();
        assert_eq!(err.to_string(), "cannot balance single-class set");
    }

    #[test]
    fn split_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (tr, va) = split_train_val(&set(100, 900), 0.85, &mut rng).unwrap();
        assert_eq!((tr.len(), va.len()), (850, 150));

        let (tr, va) = split_train_val(&set(1, 1), 0.85, &mut rng).unwrap();
        assert_eq!((tr.len(), va.len()), (1, 1));

        let a = split_train_val(&set(10, 30), 0.85, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = split_train_val(&set(10, 30), 0.85, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);

        assert!(matches!(
            split_train_val(&set(2, 2), 1.0, &mut rng),
            Err(ClassifierError::BadFraction(_))
        ));
        assert!(matches!(
            split_train_val(&set(1, 0), 0.5, &mut rng),
            Err(ClassifierError::TooSmallToSplit(1))
        ));
    }

    #[test]
    fn f1_arithmetic() {
        let r = F1Report::from_counts(3, 1, 1, 10);
        assert!((r.f1 - 0.75).abs() < 1e-15);
        let perfect = F1Report::from_counts(4, 0, 0, 6);
        assert_eq!(perfect.f1, 1.0);
        let none = F1Report::from_counts(0, 0, 0, 6);
        assert_eq!(none.f1, 0.0);
        assert!(none.degenerate);
    }

    #[test]
    fn threshold_tie_counts_as_included() {
        let r = F1Report::from_scores([(0.5, Label::Included)], 0.5);
        assert_eq!(r.tp, 1);
    }

    #[test]
    fn untrained_and_single_class() {
        let t = ScreeningText {
            doc_id: "a".into(),
            text: "x".into(),
            sentence_count: 1,
            dropped_sentence_count: 0,
            all_dropped: false,
        };
        assert!(matches!(
            predict(&ClassifierModel::untrained(), &[&t]),
            Err(ClassifierError::Untrained)
        ));
        assert!(predict(&ClassifierModel::untrained(), &[]).is_err());
        let store = FeatureStore::from_texts(Featurizer::new(10), [&t]);
        let one = TrainingSet::from_pairs([("a", Label::Included)]);
        assert!(matches!(
            train(&one, &store, &TrainConfig::default()),
            Err(ClassifierError::SingleClass)
        ));
        assert!(matches!(
            train(&TrainingSet::default(), &store, &TrainConfig::default()),
            Err(ClassifierError::EmptyTrainingSet)
        ));
        let missing = TrainingSet::from_pairs([("a", Label::Included), ("zz", Label::Excluded)]);
        assert!(matches!(
            train(&missing, &store, &TrainConfig::default()),
            Err(ClassifierError::MissingText(_))
        ));
    }

    #[test]
    fn mean_of_runs() {
        let a = vec![Prediction::from_score("x", 0.2), Prediction::from_score("y", 0.9)];
        let b = vec![Prediction::from_score("y", 0.7), Prediction::from_score("x", 0.4)];
        let m = mean_predictions(&[a, b]);
        assert_eq!(m[0].doc_id, "x");
        assert!((m[0].priority_score - 0.3).abs() < 1e-12);
        assert!((m[1].priority_score - 0.8).abs() < 1e-12);
        assert!((priority_score(m[1].logits).unwrap() - 0.8).abs() < 1e-12);
    }
}
