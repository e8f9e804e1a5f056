//! Run configuration, snapshotted into every manifest.

use std::path::{Path, PathBuf};

use p2m_core::metrics::MatchMode;
use p2m_core::models::DEFAULT_SIZE_THRESHOLD_BYTES;
use p2m_core::{GenerationConfig, Hyperparameters, SplitRatios};
use serde::{Deserialize, Serialize};

use crate::backend::CompletionBackend;
use crate::evaluate::{EmbedderChoice, EvalOptions, Metric};
use crate::gateway::ThrottlePolicy;
use crate::http::HttpBackend;
use crate::mock::{EchoBackend, ScriptedMock};
use crate::trainer::{CommandTrainer, MockTrainer, TrainerBackend, TrainerError};

/// Which completion backend a run talks to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LlmSpec {
    Echo,
    /// Scripted transcript; a relative path resolves against the run directory.
    Script { path: PathBuf },
    /// OpenAI-compatible endpoint configured through the environment.
    Http,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainerSpec {
    Mock,
    Command { argv: Vec<String> },
}

impl TrainerSpec {
    pub fn backend(&self) -> Result<Box<dyn TrainerBackend>, TrainerError> {
        Ok(match self {
            Self::Mock => Box::new(MockTrainer),
            Self::Command { argv } => Box::new(CommandTrainer::new(argv.clone())?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Seeds the train/val/test shuffle and the train job.
    pub seed: u64,
    /// Take the top dataset and guess its columns instead of waiting for a
    /// selection.
    pub auto: bool,
    pub top_k: usize,
    pub size_threshold_bytes: u64,
    /// Keep only encoder-decoder models when a card states its architecture.
    pub encoder_decoder_only: bool,
    pub generation: GenerationConfig,
    pub throttle: ThrottlePolicy,
    pub split: SplitRatios,
    pub hyperparameters: Hyperparameters,
    pub llm: LlmSpec,
    /// Ask the LLM to segment the prompt before the rule-based parser.
    pub llm_prompt_parsing: bool,
    pub trainer: TrainerSpec,
    pub cards_dir: Option<PathBuf>,
    /// Dataset ranking embedder; `none` ranks with BM25.
    pub retrieval_embedder: EmbedderChoice,
    pub metrics: Vec<Metric>,
    pub exact_match_mode: MatchMode,
    /// Token embedder for BERTScore; `none` skips it.
    pub bertscore_embedder: EmbedderChoice,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            auto: false,
            top_k: p2m_core::dataset::DEFAULT_TOP_K,
            size_threshold_bytes: DEFAULT_SIZE_THRESHOLD_BYTES,
            encoder_decoder_only: true,
            generation: GenerationConfig::default(),
            throttle: ThrottlePolicy::default(),
            split: SplitRatios::default(),
            hyperparameters: Hyperparameters::default(),
            llm: LlmSpec::Echo,
            llm_prompt_parsing: false,
            trainer: TrainerSpec::Mock,
            cards_dir: None,
            retrieval_embedder: EmbedderChoice::None,
            metrics: vec![Metric::Em, Metric::Chrf, Metric::Bertscore],
            exact_match_mode: MatchMode::Strict,
            bertscore_embedder: EmbedderChoice::None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Transcript(#[from] crate::mock::TranscriptError),
    #[error(transparent)]
    Env(#[from] crate::http::MissingEnv),
}

impl RunConfig {
    /// Applies one seed to every seeded component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.generation.rng_seed = seed;
        self.throttle.jitter_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.generation.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.throttle.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.top_k == 0 {
            return Err(ConfigError::Invalid("top_k must be positive".into()));
        }
        if !self.hyperparameters.is_valid() {
            return Err(ConfigError::Invalid("learning_rate must be positive, epochs and batch_size at least 1".into()));
        }
        let s = self.split;
        if [s.train, s.val, s.test].iter().any(|r| !(0.0..=1.0).contains(r)) || (s.train + s.val + s.test - 1.0).abs() > 1e-9 {
            return Err(ConfigError::Invalid("split ratios must lie in [0, 1] and sum to 1".into()));
        }
        Ok(())
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            metrics: self.metrics.clone(),
            exact_match_mode: self.exact_match_mode,
            embedder: self.bertscore_embedder,
            ..EvalOptions::default()
        }
    }

    pub fn llm_backend(&self, run_dir: &Path) -> Result<Box<dyn CompletionBackend>, ConfigError> {
        Ok(match &self.llm {
            LlmSpec::Echo => Box::new(EchoBackend),
            LlmSpec::Script { path } => Box::new(ScriptedMock::load(&run_dir.join(path))?),
            LlmSpec::Http => Box::new(HttpBackend::from_env()?),
        })
    }
}
