//! Synthetic labeled corpora with a tunable amount of learnable signal.
//!
//! Every document gets a templated title and a few sentences of neutral
//! filler. With probability `signal` a document also carries a handful of
//! class-indicative terms: included documents draw from an inclusion
//! vocabulary, excluded documents from a distractor vocabulary. The rest are
//! ambiguous and carry filler only.

use std::collections::HashMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{OracleCorpus, Result, SimulatorError};
use crate::classifier::Label;
use crate::corpus::{default_filters, screening_texts, Corpus, Document};

const FILLER: &[&str] = &[
    "study", "data", "region", "households", "analysis", "survey", "rural", "district", "sample", "level",
    "effects", "change", "program", "community", "access", "income", "market", "local", "national",
    "evidence", "results", "period", "outcomes", "population", "factors", "approach", "context", "model",
    "policy", "services", "women", "children", "farmers", "schools", "health", "water", "energy", "credit",
    "land", "labor", "trade", "prices", "climate", "food", "education", "village", "capacity", "growth",
    "resources", "networks", "institutions", "governance", "infrastructure", "participation", "costs",
    "benefits", "risks", "patterns", "trends", "groups",
];

const TITLE_HEADS: &[&str] = &[
    "Assessing", "Understanding", "Examining", "Exploring", "Measuring", "Revisiting", "Mapping",
];

const SYLLABLES: &[&str] = &["ka", "lo", "mi", "ra", "tu", "ve", "no", "si", "de", "pa", "zu", "ho"];

/// Deterministic pseudo-word for vocabulary slot `i`.
fn term(prefix: &str, i: usize) -> String {
    let n = SYLLABLES.len();
    format!(
        "{prefix}{}{}{}",
        SYLLABLES[i % n],
        SYLLABLES[(i / n) % n],
        SYLLABLES[(i / (n * n)) % n]
    )
}

fn long_term(i: usize) -> String {
    let n = SYLLABLES.len();
    format!("{}{}", term("", i % (n * n * n)), SYLLABLES[(i / (n * n * n)) % n])
}

/// Filler vocabulary: a short list of common words plus a long Zipf-weighted
/// tail of pseudo-words, so that no single filler word is in every document.
struct Filler {
    tail: Vec<String>,
    tail_index: WeightedIndex<f64>,
}

impl Filler {
    fn new(tail_size: usize) -> Self {
        // four syllables, so never equal to a three-syllable indicative term
        let tail: Vec<String> = (0..tail_size).map(long_term).collect();
        let weights: Vec<f64> = (0..tail_size).map(|r| 1.0 / (r as f64 + 1.0)).collect();
        Filler {
            tail,
            tail_index: WeightedIndex::new(weights).expect("positive weights"),
        }
    }

    fn word<'a>(&'a self, rng: &mut ChaCha8Rng) -> &'a str {
        if self.tail.is_empty() || rng.gen_bool(0.4) {
            FILLER.choose(rng).expect("filler")
        } else {
            &self.tail[self.tail_index.sample(rng)]
        }
    }
}

/// Generator settings beyond the three headline knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub prevalence: f64,
    pub signal: f64,
    pub seed: u64,
    /// Size of each indicative vocabulary (inclusion and distractor).
    pub indicative_terms: usize,
    /// Indicative terms inserted into a signal-bearing document.
    pub terms_per_document: usize,
    /// Chance that an abstract ends with a publisher boilerplate sentence.
    pub boilerplate_rate: f64,
    /// Size of the long-tail filler vocabulary.
    pub filler_tail: usize,
}

impl SyntheticSpec {
    pub fn new(n: usize, prevalence: f64, signal: f64, seed: u64) -> Self {
        SyntheticSpec {
            n,
            prevalence,
            signal,
            seed,
            indicative_terms: 20,
            terms_per_document: 4,
            boilerplate_rate: 0.2,
            filler_tail: 5000,
        }
    }

    pub fn generate(&self) -> Result<OracleCorpus> {
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return Err(SimulatorError::InvalidParameter(format!(
                "prevalence {} outside (0, 1)",
                self.prevalence
            )));
        }
        if !(0.0..=1.0).contains(&self.signal) {
            return Err(SimulatorError::InvalidParameter(format!("signal {} outside [0, 1]", self.signal)));
        }
        if (self.n as f64) * self.prevalence < 2.0 {
            return Err(SimulatorError::InvalidParameter(format!(
                "n * prevalence = {} < 2",
                self.n as f64 * self.prevalence
            )));
        }
        if self.indicative_terms == 0 {
            return Err(SimulatorError::InvalidParameter("indicative_terms must be positive".into()));
        }
        let n_included = (self.n as f64 * self.prevalence).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut labels: Vec<bool> = (0..self.n).map(|i| i < n_included).collect();
        labels.shuffle(&mut rng);

        let inclusion: Vec<String> = (0..self.indicative_terms).map(|i| term("", i)).collect();
        let distractor: Vec<String> = (0..self.indicative_terms).map(|i| term("x", i)).collect();
        let width = self.n.to_string().len().max(5);
        let filler = Filler::new(self.filler_tail);

        let mut docs = Vec::with_capacity(self.n);
        let mut truth = HashMap::with_capacity(self.n);
        for (i, &included) in labels.iter().enumerate() {
            let id = format!("s{i:0width$}");
            let vocab = if included { &inclusion } else { &distractor };
            let signal_terms: Vec<&str> = if rng.gen_bool(self.signal) {
                (0..self.terms_per_document)
                    .map(|_| vocab.choose(&mut rng).expect("non-empty vocabulary").as_str())
                    .collect()
            } else {
                Vec::new()
            };
            let (title, abstract_text) = self.compose(&mut rng, &filler, &signal_terms);
            docs.push(Document::new(id.clone(), title, abstract_text));
            truth.insert(id, Label::from_included(included));
        }
        let corpus = Corpus::from_documents(docs)?;
        let texts = screening_texts(&corpus, &default_filters())?;
        OracleCorpus::new(corpus, texts, truth)
    }

    fn compose(&self, rng: &mut ChaCha8Rng, filler: &Filler, signal_terms: &[&str]) -> (String, String) {
        let word = |rng: &mut ChaCha8Rng| filler.word(rng);
        let title = format!(
            "{} {} and {} in {} {}",
            TITLE_HEADS.choose(rng).expect("heads"),
            word(rng),
            word(rng),
            word(rng),
            word(rng)
        );
        let sentences = rng.gen_range(3..=5);
        let mut words: Vec<Vec<&str>> = (0..sentences)
            .map(|_| (0..rng.gen_range(7..=12)).map(|_| word(rng)).collect())
            .collect();
        for t in signal_terms {
            let s = rng.gen_range(0..words.len());
            let pos = rng.gen_range(0..=words[s].len());
            words[s].insert(pos, t);
        }
        let mut abstract_text = words
            .iter()
            .map(|w| {
                let mut s = w.join(" ");
                if let Some(first) = s.get_mut(0..1) {
                    first.make_ascii_uppercase();
                }
                s.push('.');
                s
            })
            .collect::<Vec<_>>()
            .join(" ");
        if rng.gen_bool(self.boilerplate_rate) {
            abstract_text.push_str(" © 2021 Example Press. All rights reserved.");
        }
        (title, abstract_text)
    }
}

/// Synthetic corpus with default vocabulary settings.
pub fn generate_synthetic_corpus(n: usize, prevalence: f64, signal: f64, seed: u64) -> Result<OracleCorpus> {
    SyntheticSpec::new(n, prevalence, signal, seed).generate()
}
