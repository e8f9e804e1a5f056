//! Exact match, strict or SQuAD-style normalized.

use alloc::string::String;
use serde::{Deserialize, Serialize};

use super::{check_lengths, MetricError};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    /// Byte equality.
    #[default]
    Strict,
    /// Lowercase, drop ASCII punctuation and the articles a/an/the, collapse whitespace.
    Normalized,
}

pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let no_punct: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    let mut out = String::with_capacity(no_punct.len());
    for word in no_punct.split_whitespace().filter(|w| !matches!(*w, "a" | "an" | "the")) {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

pub fn segment_match(prediction: &str, reference: &str, mode: MatchMode) -> bool {
    match mode {
        MatchMode::Strict => prediction == reference,
        MatchMode::Normalized => normalize_answer(prediction) == normalize_answer(reference),
    }
}

/// Fraction of segments whose prediction matches its reference.
pub fn exact_match<P, R>(predictions: &[P], references: &[R], mode: MatchMode) -> Result<f64, MetricError>
where
    P: AsRef<str>,
    R: AsRef<str>,
{
    check_lengths(predictions.len(), references.len())?;
    if predictions.is_empty() {
        return Err(MetricError::Empty);
    }
    let hits = predictions
        .iter()
        .zip(references)
        .filter(|(p, r)| segment_match(p.as_ref(), r.as_ref(), mode))
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}
