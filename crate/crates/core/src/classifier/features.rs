//! Hashed bag-of-words features: lowercased word unigrams and bigrams mapped
//! into a fixed number of buckets.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::ScreeningText;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a. Stable across platforms and toolchains, unlike `DefaultHasher`.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// L2-normalized sparse vector, indices sorted ascending and unique.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVec {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseVec {
    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().map(|&i| i as usize).zip(self.values.iter().copied())
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Featurizer {
    pub hash_bits: u32,
}

impl Default for Featurizer {
    fn default() -> Self {
        Featurizer { hash_bits: 18 }
    }
}

impl Featurizer {
    pub fn new(hash_bits: u32) -> Self {
        assert!((1..=30).contains(&hash_bits), "hash_bits must be in 1..=30");
        Featurizer { hash_bits }
    }

    pub fn dimension(&self) -> usize {
        1usize << self.hash_bits
    }

    fn bucket(&self, gram: &str) -> u32 {
        (fnv1a(gram.as_bytes()) & (self.dimension() as u64 - 1)) as u32
    }

    /// Term counts over unigrams and adjacent bigrams, then L2-normalized.
    pub fn featurize(&self, text: &str) -> SparseVec {
        let tokens = tokenize(text);
        let mut counts: HashMap<u32, f64> = HashMap::new();
        for t in &tokens {
            *counts.entry(self.bucket(t)).or_default() += 1.0;
        }
        for pair in tokens.windows(2) {
            let gram = format!("{} {}", pair[0], pair[1]);
            *counts.entry(self.bucket(&gram)).or_default() += 1.0;
        }
        let mut entries: Vec<(u32, f64)> = counts.into_iter().collect();
        entries.sort_unstable_by_key(|&(i, _)| i);
        let norm = entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        let scale = if norm > 0.0 { 1.0 / norm } else { 0.0 };
        SparseVec {
            indices: entries.iter().map(|&(i, _)| i).collect(),
            values: entries.iter().map(|&(_, v)| v * scale).collect(),
        }
    }
}

/// Precomputed feature vectors keyed by document id.
#[derive(Debug, Clone, Default)]
pub struct FeatureStore {
    featurizer: Featurizer,
    vectors: HashMap<String, SparseVec>,
}

impl FeatureStore {
    pub fn new(featurizer: Featurizer) -> Self {
        FeatureStore {
            featurizer,
            vectors: HashMap::new(),
        }
    }

    pub fn from_texts<'a>(featurizer: Featurizer, texts: impl IntoIterator<Item = &'a ScreeningText>) -> Self {
        let mut store = FeatureStore::new(featurizer);
        for t in texts {
            store.insert(t);
        }
        store
    }

    pub fn insert(&mut self, text: &ScreeningText) {
        let v = self.featurizer.featurize(&text.text);
        self.vectors.insert(text.doc_id.clone(), v);
    }

    pub fn get(&self, id: &str) -> Option<&SparseVec> {
        self.vectors.get(id)
    }

    pub fn featurizer(&self) -> Featurizer {
        self.featurizer
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        // published FNV-1a 64 test vectors
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn featurize_is_normalized_and_sorted() {
        let f = Featurizer::default();
        let v = f.featurize("Maize yields rose. Maize prices fell.");
        let norm: f64 = v.values.iter().map(|x| x * x).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(v.indices.windows(2).all(|w| w[0] < w[1]));
        assert!(v.indices.iter().all(|&i| (i as usize) < f.dimension()));
    }

    #[test]
    fn case_and_punctuation_insensitive() {
        let f = Featurizer::new(12);
        assert_eq!(f.featurize("Crop, YIELDS!"), f.featurize("crop yields"));
        assert_eq!(f.featurize("").nnz(), 0);
    }
}
