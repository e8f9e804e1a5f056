//! Core algorithms of the prompt-to-model pipeline.
//!
//! Everything here is pure: no IO, no clocks, no threads. The `p2m` crate
//! wires these pieces to LLM backends, trainers and the run workspace.
//!
//! * [`prompt`]: instruction/demonstration segmentation and script detection.
//! * [`retrieval`]: tokenizer, card records and an Okapi BM25 index.
//! * [`dataset`]: dataset-card ranking and column selection.
//! * [`models`]: HyDE query construction and download-weighted model ranking.
//! * [`generation`]: prompt building, annealing, decoding and consensus.
//! * [`training`]: text-to-text assembly, splits and the memorizing mock model.
//! * [`metrics`]: exact match, ChrF++, BERTScore and Kendall's tau.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod dataset;
pub mod embedding;
pub mod generation;
mod json;
pub mod metrics;
pub mod models;
pub mod prompt;
pub mod retrieval;
pub mod training;

pub use dataset::{DatasetSelection, ScoredCard, Scorer};
pub use embedding::{EmbedError, EmbeddingProvider, TokenEmbeddingProvider};
pub use generation::{GeneratedExample, GenerationConfig, GenerationReport, GenerationSession};
pub use models::{ModelRanking, RankedModel};
pub use prompt::{Demonstration, ParsedPrompt, ScriptClass};
pub use retrieval::{Bm25Index, Bm25Params, Card, CardKind};
pub use training::{Example, Hyperparameters, MemorizedModel, SplitDataset, SplitRatios};
