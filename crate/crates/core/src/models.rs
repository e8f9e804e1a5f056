//! Pretrained-model retrieval.
//!
//! An LLM first writes a hypothetical model card for the task (HyDE). The
//! instruction and that description together form the BM25 query, and each
//! model card that passes the size filter is ranked by
//! `bm25(query, card) * log(downloads + 1)`.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::retrieval::{tokenize, Bm25Index, Bm25Params, Card, CardKind, RetrievalError};

/// 3 GiB.
pub const DEFAULT_SIZE_THRESHOLD_BYTES: u64 = 3 << 30;

pub const ENCODER_DECODER: &str = "encoder-decoder";

/// Meta-prompt that asks for a hypothetical model card matching `instruction`.
pub fn hyde_prompt(instruction: &str) -> String {
    let mut out = String::from(
        "You are browsing a hub of pretrained language models. Write a short model card \
         (two to four sentences) for a hypothetical model that would be ideal to finetune \
         for the task below. Mention the model family, the kind of data it was trained on \
         and the tasks it is good at. Reply with the description only.\n\nTask:\n",
    );
    out.push_str(instruction);
    out.push_str("\n\nModel description:");
    out
}

/// The expanded BM25 query: instruction followed by the hypothetical description.
pub fn expanded_query(instruction: &str, hypothetical: &str) -> String {
    let mut query = String::from(instruction);
    if !hypothetical.trim().is_empty() {
        query.push(' ');
        query.push_str(hypothetical);
    }
    query
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedModel {
    pub id: String,
    pub bm25: f64,
    pub downloads: u64,
    pub final_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRanking {
    pub entries: Vec<RankedModel>,
    pub size_threshold_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankOptions {
    pub size_threshold_bytes: u64,
    /// Drop cards whose `architecture` is present and is not encoder-decoder.
    pub encoder_decoder_only: bool,
    /// Base of the download logarithm. Ordering does not depend on it.
    pub log_base: f64,
    pub bm25: Bm25Params,
}

impl Default for RankOptions {
    fn default() -> Self {
        Self {
            size_threshold_bytes: DEFAULT_SIZE_THRESHOLD_BYTES,
            encoder_decoder_only: true,
            log_base: core::f64::consts::E,
            bm25: Bm25Params::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelRankError {
    #[error("no model card passes the filters (size threshold {threshold} bytes)")]
    EmptyAfterFilter { threshold: u64 },
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

/// `bm25 * log_base(downloads + 1)`.
pub fn download_weighted(bm25: f64, downloads: u64, log_base: f64) -> f64 {
    let weight = libm::log(downloads as f64 + 1.0);
    if log_base == core::f64::consts::E {
        bm25 * weight
    } else {
        bm25 * weight / libm::log(log_base)
    }
}

/// Final score descending, then downloads descending, then id ascending.
pub fn ranking_order(a: &RankedModel, b: &RankedModel) -> Ordering {
    b.final_score
        .total_cmp(&a.final_score)
        .then_with(|| b.downloads.cmp(&a.downloads))
        .then_with(|| a.id.cmp(&b.id))
}

fn passes(card: &Card, opts: &RankOptions) -> bool {
    card.size_bytes <= opts.size_threshold_bytes
        && !(opts.encoder_decoder_only
            && card.architecture.as_deref().is_some_and(|a| a != ENCODER_DECODER))
}

/// Ranks the model cards in `corpus`.
///
/// BM25 statistics are computed over all model cards, so a card's BM25 value
/// does not depend on the size threshold.
pub fn rank_models(
    instruction: &str,
    hypothetical: &str,
    corpus: &[Card],
    opts: &RankOptions,
) -> Result<ModelRanking, ModelRankError> {
    let models: Vec<&Card> = corpus.iter().filter(|c| c.kind == CardKind::Model).collect();
    let index = Bm25Index::build(models.iter().copied(), opts.bm25)?;
    let query = tokenize(&expanded_query(instruction, hypothetical));

    let mut entries: Vec<RankedModel> = models
        .iter()
        .filter(|card| passes(card, opts))
        .map(|card| {
            let bm25 = index.score(&query, &card.id)?;
            Ok(RankedModel {
                id: card.id.clone(),
                bm25,
                downloads: card.downloads,
                final_score: download_weighted(bm25, card.downloads, opts.log_base),
            })
        })
        .collect::<Result<_, RetrievalError>>()?;
    if entries.is_empty() {
        return Err(ModelRankError::EmptyAfterFilter { threshold: opts.size_threshold_bytes });
    }
    entries.sort_by(ranking_order);
    Ok(ModelRanking { entries, size_threshold_bytes: opts.size_threshold_bytes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn model(id: &str, desc: &str, downloads: u64, size: u64) -> Card {
        let mut c = Card::new(id, CardKind::Model, desc);
        c.downloads = downloads;
        c.size_bytes = size;
        c
    }

    #[test]
    fn zero_downloads_zero_score() {
        let corpus = vec![model("a", "question answering t5", 0, 1), model("b", "image model", 5, 1)];
        let r = rank_models("question answering", "", &corpus, &RankOptions::default()).unwrap();
        let a = r.entries.iter().find(|e| e.id == "a").unwrap();
        assert!(a.bm25 > 0.0);
        assert_eq!(a.final_score, 0.0);
    }

    #[test]
    fn downloads_break_equal_bm25() {
        let corpus = vec![model("few", "t5 qa", 10, 1), model("many", "t5 qa", 1000, 1)];
        let r = rank_models("qa", "", &corpus, &RankOptions::default()).unwrap();
        assert_eq!(r.entries[0].bm25, r.entries[1].bm25);
        assert_eq!(r.entries[0].id, "many");
    }

    #[test]
    fn size_filter_uses_binary_gigabytes() {
        let corpus = vec![model("big", "qa", 100, 4 << 30), model("edge", "qa", 100, 3 << 30)];
        let r = rank_models("qa", "", &corpus, &RankOptions::default()).unwrap();
        assert_eq!(r.size_threshold_bytes, 3_221_225_472);
        assert_eq!(r.entries.len(), 1);
        assert_eq!(r.entries[0].id, "edge");
    }

    #[test]
    fn everything_filtered() {
        let corpus = vec![model("big", "qa", 100, 4 << 30)];
        assert_eq!(
            rank_models("qa", "", &corpus, &RankOptions::default()),
            Err(ModelRankError::EmptyAfterFilter { threshold: DEFAULT_SIZE_THRESHOLD_BYTES })
        );
    }

    #[test]
    fn architecture_predicate() {
        let mut gpt = model("gpt", "qa", 100, 1);
        gpt.architecture = Some("decoder-only".into());
        let mut t5 = model("t5", "qa", 100, 1);
        t5.architecture = Some(ENCODER_DECODER.into());
        let unknown = model("unk", "qa", 100, 1);
        let corpus = vec![gpt, t5, unknown];
        let r = rank_models("qa", "", &corpus, &RankOptions::default()).unwrap();
        let ids: Vec<_> = r.entries.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, vec!["t5", "unk"]);
        let all = RankOptions { encoder_decoder_only: false, ..RankOptions::default() };
        assert_eq!(rank_models("qa", "", &corpus, &all).unwrap().entries.len(), 3);
    }

    #[test]
    fn hypothetical_expands_query() {
        let corpus = vec![model("sql", "text to sql generation", 50, 1), model("qa", "extractive qa", 50, 1)];
        let bare = rank_models("translate questions", "", &corpus, &RankOptions::default()).unwrap();
        assert!(bare.entries.iter().all(|e| e.bm25 == 0.0));
        let r = rank_models("translate questions", "A model for text to sql", &corpus, &RankOptions::default())
            .unwrap();
        assert_eq!(r.entries[0].id, "sql");
        assert_eq!(expanded_query("a", "  "), "a");
        assert_eq!(expanded_query("a", "b"), "a b");
    }
}
