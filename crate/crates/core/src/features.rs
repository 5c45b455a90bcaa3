//! Sparse feature vectors: token counts, TF-IDF, and the code-finding layout
//! `[token counts | extension one-hot | entropy]`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::scan::{sha256_hex, shannon_entropy, Finding};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FeatureError {
    #[error("cannot fit on an empty corpus")]
    EmptyCorpus,
    #[error("invalid feature vector: {0}")]
    InvalidVector(String),
    #[error("invalid fitted model: {0}")]
    InvalidModel(String),
}

/// Lowercases `s` and returns its maximal `[a-z0-9_]` runs of length >= 2.
pub fn tokenize(s: &str) -> Vec<String> {
    let lower = s.to_lowercase();
    lower
        .split(|c: char| !(c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_'))
        .filter(|t| t.len() >= 2)
        .map(str::to_string)
        .collect()
}

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    entries: Vec<(usize, f64)>,
    dimension: usize,
}

impl FeatureVector {
    pub fn new(dimension: usize, entries: Vec<(usize, f64)>) -> Result<Self, FeatureError> {
        for w in entries.windows(2) {
            if w[0].0 >= w[1].0 {
                return Err(FeatureError::InvalidVector(format!(
                    "indices not strictly increasing at {}",
                    w[1].0
                )));
            }
        }
        if let Some(&(i, _)) = entries.iter().find(|(i, _)| *i >= dimension) {
            return Err(FeatureError::InvalidVector(format!(
                "index {i} out of range for dimension {dimension}"
            )));
        }
        if let Some(&(i, v)) = entries.iter().find(|(_, v)| !v.is_finite()) {
            return Err(FeatureError::InvalidVector(format!("non-finite value {v} at {i}")));
        }
        Ok(FeatureVector { entries, dimension })
    }

    /// Builds a vector from dense values, dropping zeros.
    pub fn from_dense(values: &[f64]) -> Result<Self, FeatureError> {
        let entries = values
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, v)| v != 0.0)
            .collect();
        FeatureVector::new(values.len(), entries)
    }

    pub fn zeros(dimension: usize) -> Self {
        FeatureVector {
            entries: Vec::new(),
            dimension,
        }
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Value at `index`; absent entries are zero.
    pub fn get(&self, index: usize) -> f64 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map_or(0.0, |pos| self.entries[pos].1)
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, v)| v * dense[i]).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dimension];
        for &(i, v) in &self.entries {
            out[i] = v;
        }
        out
    }

    /// `self` followed by `other`, with `other`'s indices shifted.
    pub fn concat(&self, other: &FeatureVector) -> FeatureVector {
        let mut entries = self.entries.clone();
        entries.extend(other.entries.iter().map(|&(i, v)| (i + self.dimension, v)));
        FeatureVector {
            entries,
            dimension: self.dimension + other.dimension,
        }
    }
}

/// Token to dense index mapping, indices assigned in sorted token order.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    fitted_on: usize,
}

impl Vocabulary {
    fn from_sorted(tokens: Vec<String>, fitted_on: usize) -> Result<Self, FeatureError> {
        if tokens.windows(2).any(|w| w[0] >= w[1]) {
            return Err(FeatureError::InvalidModel(
                "vocabulary tokens must be sorted and unique".into(),
            ));
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Vocabulary {
            tokens,
            index,
            fitted_on,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Number of documents the vocabulary was fitted on.
    pub fn fitted_on(&self) -> usize {
        self.fitted_on
    }
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    tokens: Vec<String>,
    fitted_on: usize,
}

impl Serialize for Vocabulary {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        VocabularyRepr {
            tokens: self.tokens.clone(),
            fitted_on: self.fitted_on,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = VocabularyRepr::deserialize(d)?;
        Vocabulary::from_sorted(repr.tokens, repr.fitted_on).map_err(serde::de::Error::custom)
    }
}

pub fn fit_vocabulary<T: AsRef<str>>(corpus: &[Vec<T>]) -> Result<Vocabulary, FeatureError> {
    if corpus.is_empty() {
        return Err(FeatureError::EmptyCorpus);
    }
    let unique: BTreeSet<&str> = corpus.iter().flatten().map(AsRef::as_ref).collect();
    Vocabulary::from_sorted(unique.into_iter().map(str::to_string).collect(), corpus.len())
}

/// Occurrence counts of in-vocabulary tokens.
pub fn vectorize_counts<T: AsRef<str>>(tokens: &[T], vocab: &Vocabulary) -> FeatureVector {
    let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
    for t in tokens {
        if let Some(i) = vocab.index_of(t.as_ref()) {
            *counts.entry(i).or_insert(0.0) += 1.0;
        }
    }
    FeatureVector {
        entries: counts.into_iter().collect(),
        dimension: vocab.len(),
    }
}

/// Lowercased file extension without the dot; empty when there is none.
pub fn extension_of(path: &str) -> String {
    let name = path.rsplit('/').next().unwrap_or(path);
    match name.rsplit_once('.') {
        Some((stem, ext)) if !stem.is_empty() => ext.to_lowercase(),
        _ => String::new(),
    }
}

pub const LAYOUT_CODE: [&str; 3] = ["token_counts", "extension_one_hot", "entropy_bits"];
pub const OTHER_EXTENSION: &str = "other";

/// Feature layout for code findings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeFeatureSpec {
    pub vocab: Vocabulary,
    /// Known extensions in sorted order; the "other" bucket follows them.
    pub extensions: Vec<String>,
    pub layout: Vec<String>,
}

impl CodeFeatureSpec {
    /// Fits the vocabulary on the candidates and the extension list on the
    /// extensions seen in training.
    pub fn fit<C: AsRef<str>, E: AsRef<str>>(examples: &[(C, E)]) -> Result<Self, FeatureError> {
        if examples.is_empty() {
            return Err(FeatureError::EmptyCorpus);
        }
        let corpus: Vec<Vec<String>> = examples.iter().map(|(c, _)| tokenize(c.as_ref())).collect();
        let vocab = fit_vocabulary(&corpus)?;
        let extensions: BTreeSet<String> = examples
            .iter()
            .map(|(_, e)| e.as_ref().to_lowercase())
            .filter(|e| !e.is_empty() && e != OTHER_EXTENSION)
            .collect();
        Ok(CodeFeatureSpec {
            vocab,
            extensions: extensions.into_iter().collect(),
            layout: LAYOUT_CODE.iter().map(|s| s.to_string()).collect(),
        })
    }

    pub fn dimension(&self) -> usize {
        self.vocab.len() + self.extensions.len() + 1 + 1
    }

    pub fn fingerprint(&self) -> String {
        sha256_hex(&serde_json::to_string(self).expect("spec serializes"))
    }

    /// Features for a raw candidate string found in a file with `extension`.
    pub fn features(&self, candidate: &str, extension: &str) -> FeatureVector {
        let v = self.vocab.len();
        let mut entries = vectorize_counts(&tokenize(candidate), &self.vocab).entries;
        let ext = extension.to_lowercase();
        let slot = self
            .extensions
            .binary_search(&ext)
            .unwrap_or(self.extensions.len());
        entries.push((v + slot, 1.0));
        let entropy = shannon_entropy(candidate) / 8.0;
        if entropy != 0.0 {
            entries.push((self.dimension() - 1, entropy));
        }
        FeatureVector {
            entries,
            dimension: self.dimension(),
        }
    }
}

/// Features for a finding whose candidate is known. The extension is taken
/// from `extension`, normally [`extension_of`] the finding's path.
pub fn assemble_code_features(
    finding: &Finding,
    extension: &str,
    spec: &CodeFeatureSpec,
) -> Option<FeatureVector> {
    finding
        .candidate
        .as_deref()
        .map(|c| spec.features(c, extension))
}

/// Fitted TF-IDF weighting with smoothed idf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfIdfModel {
    pub vocab: Vocabulary,
    pub doc_freq: Vec<usize>,
    pub n_docs: usize,
    pub layout: String,
}

impl TfIdfModel {
    pub fn dimension(&self) -> usize {
        self.vocab.len()
    }

    /// `ln((1 + n_docs) / (1 + doc_freq)) + 1`
    pub fn idf(&self, index: usize) -> f64 {
        ((1.0 + self.n_docs as f64) / (1.0 + self.doc_freq[index] as f64)).ln() + 1.0
    }

    pub fn fingerprint(&self) -> String {
        sha256_hex(&serde_json::to_string(self).expect("model serializes"))
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.n_docs == 0 {
            return Err(FeatureError::InvalidModel("n_docs must be >= 1".into()));
        }
        if self.doc_freq.len() != self.vocab.len() {
            return Err(FeatureError::InvalidModel(
                "doc_freq must align with the vocabulary".into(),
            ));
        }
        if self.doc_freq.iter().any(|&d| d == 0 || d > self.n_docs) {
            return Err(FeatureError::InvalidModel(
                "doc_freq entries must lie in 1..=n_docs".into(),
            ));
        }
        Ok(())
    }
}

pub fn fit_tfidf<T: AsRef<str>>(rows: &[Vec<T>]) -> Result<TfIdfModel, FeatureError> {
    let vocab = fit_vocabulary(rows)?;
    let mut doc_freq = vec![0usize; vocab.len()];
    for row in rows {
        let seen: BTreeSet<usize> = row.iter().filter_map(|t| vocab.index_of(t.as_ref())).collect();
        for i in seen {
            doc_freq[i] += 1;
        }
    }
    Ok(TfIdfModel {
        vocab,
        doc_freq,
        n_docs: rows.len(),
        layout: "tfidf".into(),
    })
}

/// L2-normalized `count * idf` weights; rows with no known token map to the
/// zero vector.
pub fn transform_tfidf<T: AsRef<str>>(tokens: &[T], model: &TfIdfModel) -> FeatureVector {
    let counts = vectorize_counts(tokens, &model.vocab);
    let mut entries: Vec<(usize, f64)> = counts
        .entries
        .into_iter()
        .map(|(i, c)| (i, c * model.idf(i)))
        .collect();
    let norm = entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (_, v) in &mut entries {
            *v /= norm;
        }
    }
    FeatureVector {
        entries,
        dimension: model.dimension(),
    }
}
