//! Task-agnostic text-generation metrics and model-ranking concurrence.

use alloc::string::String;

pub mod bertscore;
pub mod chrf;
pub mod exact_match;
pub mod kendall;

pub use bertscore::{bertscore, BertScore};
pub use chrf::{chrf_pp, ChrfConfig};
pub use exact_match::{exact_match, MatchMode};
pub use kendall::{kendall_tau, KendallResult, PValueMethod};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("{predictions} predictions but {references} references")]
    LengthMismatch { predictions: usize, references: usize },
    #[error("no segments to score")]
    Empty,
    #[error(transparent)]
    Embedder(#[from] crate::embedding::EmbedError),
    #[error("all scores in ranking {0} are equal; tau is undefined")]
    DegenerateRanking(String),
    #[error("need at least two models, got {0}")]
    TooFewItems(usize),
}

pub(crate) fn check_lengths(predictions: usize, references: usize) -> Result<(), MetricError> {
    if predictions != references {
        return Err(MetricError::LengthMismatch { predictions, references });
    }
    Ok(())
}
