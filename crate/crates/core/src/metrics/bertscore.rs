//! BERTScore with greedy matching and no IDF weighting.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{check_lengths, MetricError};
use crate::embedding::{cosine, TokenEmbeddingProvider};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BertScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn greedy(from: &[Vec<f64>], to: &[Vec<f64>]) -> f64 {
    let total: f64 = from
        .iter()
        .map(|a| to.iter().map(|b| cosine(a, b)).fold(f64::NEG_INFINITY, f64::max))
        .sum();
    total / from.len() as f64
}

/// Scores one segment from token embeddings. Either side empty gives zeros.
pub fn segment_score(candidate: &[Vec<f64>], reference: &[Vec<f64>]) -> BertScore {
    if candidate.is_empty() || reference.is_empty() {
        return BertScore::default();
    }
    let precision = greedy(candidate, reference);
    let recall = greedy(reference, candidate);
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    BertScore { precision, recall, f1 }
}

/// Unweighted corpus means of per-segment precision, recall and F1.
pub fn bertscore<P, R>(
    predictions: &[P],
    references: &[R],
    embedder: &dyn TokenEmbeddingProvider,
) -> Result<BertScore, MetricError>
where
    P: AsRef<str>,
    R: AsRef<str>,
{
    check_lengths(predictions.len(), references.len())?;
    if predictions.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut sum = BertScore::default();
    for (p, r) in predictions.iter().zip(references) {
        let s = segment_score(&embedder.embed_tokens(p.as_ref())?, &embedder.embed_tokens(r.as_ref())?);
        sum.precision += s.precision;
        sum.recall += s.recall;
        sum.f1 += s.f1;
    }
    let n = predictions.len() as f64;
    Ok(BertScore { precision: sum.precision / n, recall: sum.recall / n, f1: sum.f1 / n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{HashingEmbedder, OneHotEmbedder};

    #[test]
    fn identical_is_one() {
        let s = bertscore(&["a b c"], &["a b c"], &HashingEmbedder::default()).unwrap();
        assert!((s.precision - 1.0).abs() < 1e-12 && (s.recall - 1.0).abs() < 1e-12 && (s.f1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_hot_half_overlap() {
        let e = OneHotEmbedder::new(["a", "b", "c"]);
        let s = bertscore(&["a b"], &["a c"], &e).unwrap();
        assert_eq!(s, BertScore { precision: 0.5, recall: 0.5, f1: 0.5 });
        let s = bertscore(&["b"], &["c"], &e).unwrap();
        assert_eq!(s, BertScore::default());
    }

    #[test]
    fn empty_segment_counts_as_zero() {
        let e = OneHotEmbedder::new(["a"]);
        let s = bertscore(&["a", ""], &["a", "a"], &e).unwrap();
        assert_eq!(s, BertScore { precision: 0.5, recall: 0.5, f1: 0.5 });
    }

    #[test]
    fn embedder_errors_propagate() {
        let e = OneHotEmbedder::new(["a"]);
        assert!(matches!(bertscore(&["zzz"], &["a"], &e), Err(MetricError::Embedder(_))));
    }
}
