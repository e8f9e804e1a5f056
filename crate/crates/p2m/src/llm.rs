//! Pipeline steps that talk to the LLM: prompt segmentation, HyDE, and
//! dataset generation.

use p2m_core::generation::{PlannedRequest, Progress};
use p2m_core::models::hyde_prompt;
use p2m_core::prompt::{
    decode_segmentation, parse_prompt, segmentation_prompt, translate_instruction, PromptError, ScriptDetector,
    TranslationNote, Translator,
};
use p2m_core::{GeneratedExample, GenerationConfig, GenerationReport, GenerationSession, ParsedPrompt};

use crate::backend::{CompletionBackend, ErrorKind};
use crate::gateway::{CompletionRequest, Gateway};

/// Gateway plus the backend it drives.
#[derive(Clone, Copy)]
pub struct Llm<'a> {
    pub gateway: &'a Gateway,
    pub backend: &'a dyn CompletionBackend,
}

impl Llm<'_> {
    pub async fn complete_one(&self, tag: &str, prompt: String, temperature: f64, max_tokens: u32) -> Result<String, ErrorKind> {
        let req = [CompletionRequest::new(tag, prompt, temperature, max_tokens)];
        let mut results = self.gateway.complete_batch(&req, self.backend).await;
        results.pop().expect("one result per request").outcome
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseOutcome {
    pub parsed: ParsedPrompt,
    pub used_llm: bool,
    pub translation: TranslationNote,
    pub warnings: Vec<String>,
}

/// Segments `raw` (through the LLM when given, else by the fallback grammar)
/// and routes a non-English instruction through `translator`.
pub async fn parse_with(
    raw: &str,
    llm: Option<Llm<'_>>,
    detector: &(dyn ScriptDetector + Sync),
    translator: &(dyn Translator + Sync),
) -> Result<ParseOutcome, PromptError> {
    if raw.trim().is_empty() {
        return Err(PromptError::EmptyPrompt);
    }
    let mut warnings = Vec::new();
    let reply = match llm {
        Some(llm) => match llm.complete_one("segment", segmentation_prompt(raw), 0.0, 1024).await {
            Ok(text) => Some(text),
            Err(kind) => {
                warnings.push(format!("segmentation request failed ({kind}); used the rule-based parser"));
                None
            }
        },
        None => None,
    };
    let decoded = reply.as_deref().and_then(decode_segmentation);
    if reply.is_some() && decoded.is_none() {
        warnings.push("segmentation reply did not decode; used the rule-based parser".into());
    }
    let used_llm = decoded.is_some();
    let mut parsed = match decoded {
        Some(p) => p,
        None => parse_prompt(raw, None)?,
    };
    let translation = translate_instruction(&mut parsed, detector, translator);
    match &translation {
        TranslationNote::PassedThrough => {
            warnings.push("instruction is not in English and no translator is configured; kept as is".into())
        }
        TranslationNote::Failed(e) => warnings.push(format!("translation failed: {e}; kept the original")),
        _ => {}
    }
    Ok(ParseOutcome { parsed, used_llm, translation, warnings })
}

/// HyDE: a hypothetical model description for `instruction`, or "" when the
/// backend fails.
pub async fn hypothesize_description(instruction: &str, llm: Llm<'_>) -> String {
    llm.complete_one("hyde", hyde_prompt(instruction), 0.0, 256).await.unwrap_or_else(|kind| {
        tracing::warn!(%kind, "HyDE request failed; ranking with the bare instruction");
        String::new()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSet {
    pub examples: Vec<GeneratedExample>,
    pub report: GenerationReport,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GenerateError {
    #[error(transparent)]
    Config(#[from] p2m_core::generation::ConfigError),
    /// A whole batch failed after retries. Carries what was generated so far.
    #[error("every request in a batch failed ({last_error}); generation aborted")]
    GatewayDown { partial: GeneratedSet, last_error: ErrorKind },
}

/// Runs batches until the target or the request budget is reached.
/// `on_progress` is called after every batch.
pub async fn generate_dataset(
    parsed: &ParsedPrompt,
    cfg: &GenerationConfig,
    llm: Llm<'_>,
    on_progress: &mut (dyn FnMut(&Progress) + Send),
) -> Result<GeneratedSet, GenerateError> {
    let mut session = GenerationSession::new(parsed.clone(), cfg.clone())?;
    while let Some(batch) = session.next_batch() {
        let requests: Vec<CompletionRequest> = batch
            .iter()
            .map(|r: &PlannedRequest| CompletionRequest::new(&r.tag, &r.prompt, r.temperature, r.max_output_tokens))
            .collect();
        let results = llm.gateway.complete_batch(&requests, llm.backend).await;
        let mut last_error = None;
        let mut successes = 0;
        for (planned, result) in batch.iter().zip(&results) {
            match &result.outcome {
                Ok(text) => {
                    successes += 1;
                    session.ingest(planned, text);
                }
                Err(kind) => {
                    last_error = Some(*kind);
                    session.record_failure(planned);
                }
            }
        }
        on_progress(&session.progress());
        if successes == 0 {
            let (examples, report) = session.finish();
            return Err(GenerateError::GatewayDown {
                partial: GeneratedSet { examples, report },
                last_error: last_error.expect("empty batches are never planned"),
            });
        }
    }
    let (examples, report) = session.finish();
    Ok(GeneratedSet { examples, report })
}
