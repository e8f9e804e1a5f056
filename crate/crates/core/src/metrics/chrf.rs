//! Corpus-level ChrF++.
//!
//! Character n-grams (whitespace removed) and word n-grams (whitespace
//! tokens) are counted per segment with clipped matches, then the counts are
//! summed over the corpus. Precision and recall are averaged uniformly over
//! every order that has at least one n-gram on either side, and combined as
//! `F_beta = (1 + beta^2) P R / (beta^2 P + R)`, scaled to `[0, 100]`.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{check_lengths, MetricError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChrfConfig {
    pub char_n_max: usize,
    pub word_n_max: usize,
    pub beta: f64,
}

impl Default for ChrfConfig {
    fn default() -> Self {
        Self { char_n_max: 6, word_n_max: 2, beta: 2.0 }
    }
}

/// Aggregated counts for one n-gram order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OrderStats {
    pub matches: u64,
    pub hyp_total: u64,
    pub ref_total: u64,
}

fn ngram_counts<T: Ord + Copy>(items: &[T], n: usize) -> BTreeMap<&[T], u64> {
    let mut counts = BTreeMap::new();
    if n > 0 {
        for window in items.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

fn accumulate<T: Ord + Copy>(hyp: &[T], reference: &[T], n: usize, stats: &mut OrderStats) {
    let h = ngram_counts(hyp, n);
    let r = ngram_counts(reference, n);
    stats.hyp_total += h.values().sum::<u64>();
    stats.ref_total += r.values().sum::<u64>();
    stats.matches += h.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum::<u64>();
}

/// Per-order statistics: character orders `1..=char_n_max`, then word orders
/// `1..=word_n_max`.
pub fn chrf_stats<P, R>(predictions: &[P], references: &[R], cfg: &ChrfConfig) -> Result<Vec<OrderStats>, MetricError>
where
    P: AsRef<str>,
    R: AsRef<str>,
{
    check_lengths(predictions.len(), references.len())?;
    let mut stats = alloc::vec![OrderStats::default(); cfg.char_n_max + cfg.word_n_max];
    let (char_stats, word_stats) = stats.split_at_mut(cfg.char_n_max);
    for (p, r) in predictions.iter().zip(references) {
        let (p, r) = (p.as_ref(), r.as_ref());
        let p_chars: Vec<char> = p.chars().filter(|c| !c.is_whitespace()).collect();
        let r_chars: Vec<char> = r.chars().filter(|c| !c.is_whitespace()).collect();
        for (i, s) in char_stats.iter_mut().enumerate() {
            accumulate(&p_chars, &r_chars, i + 1, s);
        }
        let p_words: Vec<&str> = p.split_whitespace().collect();
        let r_words: Vec<&str> = r.split_whitespace().collect();
        for (i, s) in word_stats.iter_mut().enumerate() {
            accumulate(&p_words, &r_words, i + 1, s);
        }
    }
    Ok(stats)
}

/// Combines per-order statistics into a score in `[0, 100]`.
///
/// A corpus with no n-grams on either side at any order scores 100: the
/// hypothesis and reference are then both blank.
pub fn chrf_from_stats(stats: &[OrderStats], beta: f64) -> f64 {
    let mut precision = 0.0;
    let mut recall = 0.0;
    let mut orders = 0usize;
    for s in stats.iter().filter(|s| s.hyp_total > 0 || s.ref_total > 0) {
        if s.hyp_total > 0 {
            precision += s.matches as f64 / s.hyp_total as f64;
        }
        if s.ref_total > 0 {
            recall += s.matches as f64 / s.ref_total as f64;
        }
        orders += 1;
    }
    if orders == 0 {
        return 100.0;
    }
    let p = precision / orders as f64;
    let r = recall / orders as f64;
    let b2 = beta * beta;
    let denom = b2 * p + r;
    if denom == 0.0 {
        0.0
    } else {
        100.0 * (1.0 + b2) * p * r / denom
    }
}

pub fn chrf_pp<P, R>(predictions: &[P], references: &[R], cfg: &ChrfConfig) -> Result<f64, MetricError>
where
    P: AsRef<str>,
    R: AsRef<str>,
{
    if predictions.is_empty() && references.is_empty() {
        return Err(MetricError::Empty);
    }
    let stats = chrf_stats(predictions, references, cfg)?;
    Ok(chrf_from_stats(&stats, cfg.beta))
}
