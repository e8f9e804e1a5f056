//! Card records, tokenization and an Okapi BM25 inverted index.
//!
//! Scoring uses the Lucene-style IDF `ln((N - df + 0.5) / (df + 0.5) + 1)`,
//! which is never negative, and treats the query as a multiset: a term that
//! appears twice in the query contributes twice.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CardKind {
    Dataset,
    Model,
}

/// Description plus metadata for one dataset or model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Card {
    pub id: String,
    pub kind: CardKind,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub downloads: u64,
    #[serde(default)]
    pub size_bytes: u64,
    #[serde(default)]
    pub columns: Vec<String>,
    /// Model architecture family, e.g. `encoder-decoder`, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub architecture: Option<String>,
}

impl Card {
    pub fn new(id: impl Into<String>, kind: CardKind, description: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind,
            description: description.into(),
            downloads: 0,
            size_bytes: 0,
            columns: Vec::new(),
            architecture: None,
        }
    }
}

/// Lowercases `text` and splits it on runs of non-alphanumeric codepoints.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(String::from)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RetrievalError {
    #[error("duplicate card id `{0}`")]
    DuplicateCardId(String),
    #[error("unknown card id `{0}`")]
    UnknownCard(String),
}

/// Immutable BM25 index over card descriptions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bm25Index {
    postings: BTreeMap<String, BTreeMap<String, u32>>,
    doc_lengths: BTreeMap<String, u32>,
    avgdl: f64,
    params: Bm25Params,
}

impl Bm25Index {
    pub fn build<'a, I>(cards: I, params: Bm25Params) -> Result<Self, RetrievalError>
    where
        I: IntoIterator<Item = &'a Card>,
    {
        let mut postings: BTreeMap<String, BTreeMap<String, u32>> = BTreeMap::new();
        let mut doc_lengths = BTreeMap::new();
        let mut total: u64 = 0;
        for card in cards {
            if doc_lengths.contains_key(&card.id) {
                return Err(RetrievalError::DuplicateCardId(card.id.clone()));
            }
            let tokens = tokenize(&card.description);
            total += tokens.len() as u64;
            doc_lengths.insert(card.id.clone(), tokens.len() as u32);
            for token in tokens {
                *postings.entry(token).or_default().entry(card.id.clone()).or_insert(0) += 1;
            }
        }
        let avgdl = if doc_lengths.is_empty() { 0.0 } else { total as f64 / doc_lengths.len() as f64 };
        Ok(Self { postings, doc_lengths, avgdl, params })
    }

    /// Corpus size.
    pub fn len(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_lengths.is_empty()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_len(&self, card_id: &str) -> Option<u32> {
        self.doc_lengths.get(card_id).copied()
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, BTreeMap::len)
    }

    pub fn term_freq(&self, term: &str, card_id: &str) -> u32 {
        self.postings.get(term).and_then(|p| p.get(card_id)).copied().unwrap_or(0)
    }

    pub fn postings(&self) -> &BTreeMap<String, BTreeMap<String, u32>> {
        &self.postings
    }

    pub fn card_ids(&self) -> impl Iterator<Item = &str> {
        self.doc_lengths.keys().map(String::as_str)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.len() as f64;
        let df = self.doc_freq(term) as f64;
        libm::log((n - df + 0.5) / (df + 0.5) + 1.0)
    }

    fn term_weight(&self, idf: f64, tf: u32, dl: u32) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        let norm = 1.0 - b + b * dl as f64 / self.avgdl;
        idf * tf * (k1 + 1.0) / (tf + k1 * norm)
    }

    /// BM25 score of one card against a query token multiset.
    pub fn score<S: AsRef<str>>(&self, query: &[S], card_id: &str) -> Result<f64, RetrievalError> {
        let dl = self
            .doc_len(card_id)
            .ok_or_else(|| RetrievalError::UnknownCard(card_id.into()))?;
        let mut score = 0.0;
        for term in query {
            let term = term.as_ref();
            let tf = self.term_freq(term, card_id);
            if tf > 0 {
                score += self.term_weight(self.idf(term), tf, dl);
            }
        }
        Ok(score)
    }

    /// Scores every card in the index, in card-id order. Cards sharing no
    /// term with the query score 0.
    pub fn score_all<S: AsRef<str>>(&self, query: &[S]) -> Vec<(&str, f64)> {
        let mut multiplicity: BTreeMap<&str, u32> = BTreeMap::new();
        for term in query {
            *multiplicity.entry(term.as_ref()).or_insert(0) += 1;
        }
        let mut scores: BTreeMap<&str, f64> = self.card_ids().map(|id| (id, 0.0)).collect();
        for (term, count) in multiplicity {
            let Some(posting) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(term);
            for (id, &tf) in posting {
                let weight = self.term_weight(idf, tf, self.doc_lengths[id]);
                *scores.get_mut(id.as_str()).expect("posting id is indexed") += weight * count as f64;
            }
        }
        scores.into_iter().collect()
    }

    /// Distinct terms in the index.
    pub fn vocabulary(&self) -> BTreeSet<&str> {
        self.postings.keys().map(String::as_str).collect()
    }
}
