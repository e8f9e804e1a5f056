//! The persisted stage machine that drives a run from prompt to evaluation.
//!
//! Each call to [`advance`] runs exactly one stage, writes that stage's
//! files, and then moves the manifest forward. A crash mid-stage leaves the
//! manifest at the previous stage, so the next `advance` repeats the stage
//! from scratch.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use p2m_core::dataset::{apply_selection, auto_select, rank_datasets};
use p2m_core::embedding::HashingEmbedder;
use p2m_core::models::{expanded_query, rank_models, ModelRankError, RankOptions, RankedModel};
use p2m_core::prompt::{BlockRatioDetector, IdentityTranslator};
use p2m_core::training::{assemble_training_set, textualize, textualize_generated};
use p2m_core::{DatasetSelection, EmbeddingProvider, Example, ParsedPrompt, ScoredCard};
use serde::{Deserialize, Serialize};

use crate::cards::CardStore;
use crate::config::{LlmSpec, RunConfig};
use crate::evaluate::{self, EmbedderChoice, EvalReport};
use crate::files;
use crate::gateway::Gateway;
use crate::llm::{self, GenerateError, Llm};
use crate::run::{now_ms, RunDir, RunError, RunManifest, Stage, Workspace};
use crate::trainer::{self, Artifact, TrainJob, SCRATCH_MOCK};

pub const PROMPT: &str = "prompt.txt";
pub const TRANSCRIPT: &str = "llm_transcript.json";
pub const PARSED_PROMPT: &str = "parsed_prompt.json";
pub const DATASET_CANDIDATES: &str = "dataset_candidates.json";
pub const SELECTION: &str = "selection.json";
pub const RETRIEVED: &str = "retrieved.jsonl";
pub const GENERATED: &str = "generated.jsonl";
pub const GENERATION_REPORT: &str = "generation_report.json";
pub const MODEL_CANDIDATES: &str = "model_candidates.json";
pub const TRAIN: &str = "train.jsonl";
pub const VAL: &str = "val.jsonl";
pub const TEST: &str = "test.jsonl";
pub const TRAIN_JOB: &str = "train_job.json";
pub const ARTIFACT: &str = "artifact.json";
pub const EVAL_REPORT: &str = "eval_report.json";

const EXCERPT_CHARS: usize = 280;

/// One entry of `dataset_candidates.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateView {
    #[serde(flatten)]
    pub scored: ScoredCard,
    pub description: String,
    pub columns: Vec<String>,
}

/// Contents of `model_candidates.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCandidates {
    pub hypothetical_description: String,
    pub query: String,
    pub size_threshold_bytes: u64,
    pub entries: Vec<RankedModel>,
}

pub enum PromptSource<'a> {
    File(&'a Path),
    Text(&'a str),
}

fn stage_event(run: &RunDir, stage: Stage, kind: &str, data: serde_json::Value) {
    if let Err(e) = run.append_event(stage, kind, data) {
        tracing::warn!(run = %run.id, error = %e, "cannot append event");
    }
}

fn fail(run: &RunDir, manifest: &mut RunManifest, last_good: Option<Stage>, cause: String) -> Result<(), RunError> {
    manifest.stage = Stage::Failed;
    manifest.last_good_stage = last_good;
    manifest.awaiting_selection = false;
    manifest.timestamps.insert(Stage::Failed, now_ms());
    stage_event(run, Stage::Failed, "failed", serde_json::json!({ "cause": cause }));
    manifest.failure = Some(cause);
    manifest.events_committed = run.event_count()?;
    run.save_manifest(manifest)
}

fn gateway(cfg: &RunConfig) -> anyhow::Result<Gateway> {
    Ok(Gateway::new(cfg.throttle.clone())?)
}

/// Creates a run directory, snapshots the prompt and transcript, and parses
/// the prompt. Parse and input failures produce a failed manifest rather
/// than an error.
pub async fn create_run(ws: &Workspace, prompt: PromptSource<'_>, mut config: RunConfig) -> Result<RunManifest, RunError> {
    config.validate().map_err(|e| RunError::InvalidTransition(format!("invalid config: {e}")))?;
    let run = ws.create_run_dir()?;
    let _lock = run.try_lock()?;
    let mut manifest = RunManifest {
        run_id: run.id.clone(),
        stage: Stage::Parsed,
        awaiting_selection: false,
        none_selected: false,
        last_good_stage: None,
        failure: None,
        timestamps: Default::default(),
        config: config.clone(),
        artifacts: Default::default(),
        warnings: Vec::new(),
        events_committed: 0,
    };
    stage_event(&run, Stage::Parsed, "run_created", serde_json::json!({ "run_id": run.id }));

    let result: anyhow::Result<()> = async {
        let text = match prompt {
            PromptSource::File(p) => {
                std::fs::read_to_string(p).with_context(|| format!("cannot read prompt file {}", p.display()))?
            }
            PromptSource::Text(t) => t.to_owned(),
        };
        files::write_atomic(&run.file(PROMPT), text.as_bytes())?;
        manifest.artifacts.insert("prompt".into(), PROMPT.into());

        if let LlmSpec::Script { path } = &config.llm {
            let bytes = std::fs::read(path).with_context(|| format!("cannot read transcript {}", path.display()))?;
            files::write_atomic(&run.file(TRANSCRIPT), &bytes)?;
            config.llm = LlmSpec::Script { path: TRANSCRIPT.into() };
            manifest.config = config.clone();
        }

        let backend = if config.llm_prompt_parsing { Some(config.llm_backend(&run.path)?) } else { None };
        let gw = gateway(&config)?;
        let llm = backend.as_deref().map(|b| Llm { gateway: &gw, backend: b });
        let outcome = llm::parse_with(&text, llm, &BlockRatioDetector::default(), &IdentityTranslator).await?;
        files::write_json(&run.file(PARSED_PROMPT), &outcome.parsed)?;
        manifest.artifacts.insert("parsed_prompt".into(), PARSED_PROMPT.into());
        manifest.warnings.extend(outcome.warnings);
        Ok(())
    }
    .await;

    match result {
        Ok(()) => {
            manifest.timestamps.insert(Stage::Parsed, now_ms());
            stage_event(&run, Stage::Parsed, "stage_completed", serde_json::json!({}));
            manifest.events_committed = run.event_count()?;
            run.save_manifest(&manifest)?;
        }
        Err(e) => fail(&run, &mut manifest, None, format!("{e:#}"))?,
    }
    Ok(manifest)
}

enum StepOutcome {
    Done,
    AwaitingSelection,
}

struct Step<'a> {
    run: &'a RunDir,
    manifest: &'a mut RunManifest,
}

impl Step<'_> {
    fn cfg(&self) -> &RunConfig {
        &self.manifest.config
    }

    fn path(&self, name: &str) -> PathBuf {
        self.run.file(name)
    }

    fn record(&mut self, name: &str, file: &str) {
        self.manifest.artifacts.insert(name.into(), file.into());
    }

    fn warn(&mut self, stage: Stage, message: String) {
        stage_event(self.run, stage, "warning", serde_json::json!({ "message": message }));
        self.manifest.warnings.push(message);
    }

    fn parsed(&self) -> anyhow::Result<ParsedPrompt> {
        Ok(files::read_json(&self.path(PARSED_PROMPT))?)
    }

    fn cards(&self) -> anyhow::Result<CardStore> {
        match &self.cfg().cards_dir {
            Some(dir) => Ok(CardStore::open(dir)?),
            None => Ok(CardStore::default()),
        }
    }

    fn backend(&self) -> anyhow::Result<Box<dyn crate::backend::CompletionBackend>> {
        Ok(self.cfg().llm_backend(&self.run.path)?)
    }

    fn candidates(&mut self) -> anyhow::Result<StepOutcome> {
        let parsed = self.parsed()?;
        let store = self.cards()?;
        let embedder: Option<HashingEmbedder> = match self.cfg().retrieval_embedder {
            EmbedderChoice::Hashing => Some(HashingEmbedder::default()),
            EmbedderChoice::None => None,
        };
        let ranking = rank_datasets(
            &parsed.instruction,
            &store.datasets,
            embedder.as_ref().map(|e| e as &dyn EmbeddingProvider),
            self.cfg().top_k,
        )?;
        if ranking.empty_corpus {
            self.warn(Stage::DatasetCandidates, "no dataset cards available; continuing without retrieval".into());
        }
        for w in ranking.warnings {
            self.warn(Stage::DatasetCandidates, w);
        }
        let views: Vec<CandidateView> = ranking
            .candidates
            .into_iter()
            .map(|scored| {
                let card = store.dataset(&scored.id).expect("ranked cards come from the store");
                CandidateView {
                    description: card.description.chars().take(EXCERPT_CHARS).collect(),
                    columns: card.columns.clone(),
                    scored,
                }
            })
            .collect();
        files::write_json(&self.path(DATASET_CANDIDATES), &views)?;
        self.record("dataset_candidates", DATASET_CANDIDATES);
        Ok(StepOutcome::Done)
    }

    fn select(&mut self) -> anyhow::Result<StepOutcome> {
        let store = self.cards()?;
        let selection = if self.path(SELECTION).exists() {
            files::read_json::<DatasetSelection>(&self.path(SELECTION))?
        } else if self.cfg().auto {
            let candidates: Vec<CandidateView> = files::read_json(&self.path(DATASET_CANDIDATES))?;
            match candidates.first().and_then(|c| store.dataset(&c.scored.id)) {
                Some(card) => auto_select(card, &store.table(card)?.text_columns),
                None => DatasetSelection::none_selected(),
            }
        } else {
            return Ok(StepOutcome::AwaitingSelection);
        };

        let mut retrieved = Vec::new();
        if selection.accepted {
            let card = store
                .dataset(&selection.card_id)
                .ok_or_else(|| anyhow!("selected dataset `{}` is not in the card snapshot", selection.card_id))?;
            selection.validate(&card.columns)?;
            let instruction = self.parsed()?.instruction;
            let records = apply_selection(&selection, &store.table(card)?.table)?;
            retrieved = records
                .records
                .iter()
                .map(|r| Example::new(textualize(&instruction, &r.fields), r.output.clone()))
                .collect();
            if retrieved.is_empty() {
                self.warn(Stage::DatasetSelected, format!("dataset `{}` has no rows", card.id));
            }
        }
        self.manifest.none_selected = !selection.accepted;
        files::write_json(&self.path(SELECTION), &selection)?;
        files::write_jsonl(&self.path(RETRIEVED), &retrieved)?;
        self.record("selection", SELECTION);
        self.record("retrieved", RETRIEVED);
        Ok(StepOutcome::Done)
    }

    async fn generate(&mut self) -> anyhow::Result<StepOutcome> {
        let parsed = self.parsed()?;
        let backend = self.backend()?;
        let gw = gateway(self.cfg())?;
        let llm = Llm { gateway: &gw, backend: backend.as_ref() };
        let run = self.run;
        let mut on_progress = |p: &p2m_core::generation::Progress| {
            stage_event(run, Stage::Generated, "generation_progress", serde_json::to_value(p).expect("serializable"));
        };
        let (set, error) = match llm::generate_dataset(&parsed, &self.cfg().generation, llm, &mut on_progress).await {
            Ok(set) => (set, None),
            Err(GenerateError::GatewayDown { partial, last_error }) => (partial, Some(last_error)),
            Err(e) => return Err(e.into()),
        };
        let examples: Vec<Example> = set.examples.iter().map(|g| Example::new(g.input.clone(), g.output.clone())).collect();
        files::write_jsonl(&self.path(GENERATED), &examples)?;
        files::write_json(&self.path(GENERATION_REPORT), &set.report)?;
        self.record("generated", GENERATED);
        self.record("generation_report", GENERATION_REPORT);
        if let Some(kind) = error {
            bail!("LLM gateway down ({kind}); {} examples kept in {GENERATED}", examples.len());
        }
        if set.report.budget_exhausted {
            self.warn(
                Stage::Generated,
                format!(
                    "request budget exhausted with {} of {} unique inputs",
                    set.report.unique_inputs_final,
                    self.cfg().generation.target_unique_inputs
                ),
            );
        }
        Ok(StepOutcome::Done)
    }

    async fn models(&mut self) -> anyhow::Result<StepOutcome> {
        let parsed = self.parsed()?;
        let store = self.cards()?;
        let backend = self.backend()?;
        let gw = gateway(self.cfg())?;
        let hypothetical =
            llm::hypothesize_description(&parsed.instruction, Llm { gateway: &gw, backend: backend.as_ref() }).await;
        let opts = RankOptions {
            size_threshold_bytes: self.cfg().size_threshold_bytes,
            encoder_decoder_only: self.cfg().encoder_decoder_only,
            ..RankOptions::default()
        };
        let entries = match rank_models(&parsed.instruction, &hypothetical, &store.models, &opts) {
            Ok(r) => r.entries,
            Err(ModelRankError::EmptyAfterFilter { threshold }) => {
                self.warn(
                    Stage::ModelCandidates,
                    format!("no model card fits under {threshold} bytes; training from `{SCRATCH_MOCK}`"),
                );
                Vec::new()
            }
            Err(e) => return Err(e.into()),
        };
        let out = ModelCandidates {
            query: expanded_query(&parsed.instruction, &hypothetical),
            hypothetical_description: hypothetical,
            size_threshold_bytes: opts.size_threshold_bytes,
            entries,
        };
        files::write_json(&self.path(MODEL_CANDIDATES), &out)?;
        self.record("model_candidates", MODEL_CANDIDATES);
        Ok(StepOutcome::Done)
    }

    fn train(&mut self) -> anyhow::Result<StepOutcome> {
        let instruction = self.parsed()?.instruction;
        let retrieved: Vec<Example> = files::read_jsonl(&self.path(RETRIEVED))?;
        let generated: Vec<Example> = files::read_jsonl::<Example>(&self.path(GENERATED))?
            .iter()
            .map(|e| textualize_generated(&instruction, e))
            .collect();
        let split = assemble_training_set(&retrieved, &generated, self.cfg().split, self.cfg().seed)?;
        for (name, file, rows) in [("train", TRAIN, &split.train), ("val", VAL, &split.val), ("test", TEST, &split.test)] {
            files::write_jsonl(&self.path(file), rows)?;
            self.record(name, file);
        }
        let models: ModelCandidates = files::read_json(&self.path(MODEL_CANDIDATES))?;
        let abs = std::path::absolute(&self.run.path)?;
        let job = TrainJob {
            base_model_id: models.entries.first().map_or_else(|| SCRATCH_MOCK.to_owned(), |m| m.id.clone()),
            train_path: abs.join(TRAIN),
            val_path: abs.join(VAL),
            output_dir: abs.join("artifact"),
            hyperparameters: self.cfg().hyperparameters.clone(),
            seed: self.cfg().seed,
        };
        let backend = self.cfg().trainer.backend()?;
        trainer::train(&job, &abs.join(TRAIN_JOB), backend.as_ref())?;
        self.record("train_job", TRAIN_JOB);
        self.record("artifact", ARTIFACT);
        Ok(StepOutcome::Done)
    }

    fn evaluate(&mut self) -> anyhow::Result<StepOutcome> {
        let test: Vec<Example> = files::read_jsonl(&self.path(TEST))?;
        if test.is_empty() {
            bail!("test split is empty; generate or retrieve more examples");
        }
        let artifact = Artifact::load(&self.path(ARTIFACT))?;
        let backend = self.cfg().trainer.backend()?;
        let inputs: Vec<String> = test.iter().map(|e| e.input.clone()).collect();
        let references: Vec<&str> = test.iter().map(|e| e.output.as_str()).collect();
        let predictions = backend.predict(&artifact, &inputs)?;
        let report =
            evaluate::score(&predictions, &references, &self.cfg().eval_options(), Some(artifact.manifest.artifact_id))?;
        for w in &report.warnings {
            self.warn(Stage::Evaluated, w.clone());
        }
        files::write_json(&self.path(EVAL_REPORT), &report)?;
        self.record("eval_report", EVAL_REPORT);
        Ok(StepOutcome::Done)
    }
}

async fn advance_locked(run: &RunDir, manifest: &mut RunManifest) -> Result<(), RunError> {
    let current = manifest.stage;
    let next = match current.next() {
        Some(s) if current != Stage::Failed => s,
        _ => return Err(RunError::InvalidTransition(format!("run `{}` is {current}", run.id))),
    };
    run.truncate_events(manifest.events_committed)?;
    if !(next == Stage::DatasetSelected && manifest.awaiting_selection) {
        stage_event(run, next, "stage_started", serde_json::json!({}));
    }
    let mut step = Step { run, manifest };
    let result = match next {
        Stage::DatasetCandidates => step.candidates(),
        Stage::DatasetSelected => step.select(),
        Stage::Generated => step.generate().await,
        Stage::ModelCandidates => step.models().await,
        Stage::Trained => step.train(),
        Stage::Evaluated => step.evaluate(),
        Stage::Parsed | Stage::Failed => unreachable!("never a successor stage"),
    };
    match result {
        Ok(StepOutcome::Done) => {
            manifest.stage = next;
            manifest.awaiting_selection = false;
            manifest.timestamps.insert(next, now_ms());
            stage_event(run, next, "stage_completed", serde_json::json!({}));
            manifest.events_committed = run.event_count()?;
            run.save_manifest(manifest)
        }
        Ok(StepOutcome::AwaitingSelection) => {
            if !manifest.awaiting_selection {
                manifest.awaiting_selection = true;
                stage_event(run, next, "awaiting_selection", serde_json::json!({}));
            }
            manifest.events_committed = run.event_count()?;
            run.save_manifest(manifest)
        }
        Err(e) => fail(run, manifest, Some(current), format!("{next}: {e:#}")),
    }
}

/// Runs the next stage of `run_id`. Stage failures are recorded in the
/// returned manifest; errors are reserved for runs that cannot move.
pub async fn advance(ws: &Workspace, run_id: &str) -> Result<RunManifest, RunError> {
    let run = ws.run(run_id)?;
    let _lock = run.try_lock()?;
    let mut manifest = run.manifest()?;
    advance_locked(&run, &mut manifest).await?;
    Ok(manifest)
}

/// Advances until the run is terminal, waits for a selection, or reaches
/// `until`.
pub async fn advance_until(ws: &Workspace, run_id: &str, until: Option<Stage>) -> Result<RunManifest, RunError> {
    let run = ws.run(run_id)?;
    let _lock = run.try_lock()?;
    let mut manifest = run.manifest()?;
    loop {
        if manifest.stage.is_terminal() || until.is_some_and(|u| manifest.stage >= u) {
            return Ok(manifest);
        }
        let before = manifest.stage;
        advance_locked(&run, &mut manifest).await?;
        if manifest.stage == before {
            return Ok(manifest);
        }
    }
}

/// Puts a failed run back at its last good stage.
pub fn retry(ws: &Workspace, run_id: &str) -> Result<RunManifest, RunError> {
    let run = ws.run(run_id)?;
    let _lock = run.try_lock()?;
    let mut manifest = run.manifest()?;
    let restore = match (manifest.stage, manifest.last_good_stage) {
        (Stage::Failed, Some(s)) => s,
        (Stage::Failed, None) => return Err(RunError::InvalidTransition("run failed before parsing; create a new run".into())),
        (s, _) => return Err(RunError::InvalidTransition(format!("run `{run_id}` is {s}, not failed"))),
    };
    manifest.stage = restore;
    manifest.failure = None;
    manifest.last_good_stage = None;
    manifest.timestamps.remove(&Stage::Failed);
    stage_event(&run, restore, "retry", serde_json::json!({}));
    manifest.events_committed = run.event_count()?;
    run.save_manifest(&manifest)?;
    Ok(manifest)
}

#[derive(Debug, thiserror::Error)]
pub enum SelectionPostError {
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("{0}")]
    Conflict(String),
    #[error(transparent)]
    Invalid(#[from] p2m_core::dataset::SelectionError),
    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),
    #[error(transparent)]
    Cards(#[from] crate::cards::CardError),
}

/// Records a human dataset choice and runs the selection stage with it. Only
/// the first selection for a run is accepted.
pub async fn post_selection(ws: &Workspace, run_id: &str, selection: DatasetSelection) -> Result<RunManifest, SelectionPostError> {
    let run = ws.run(run_id)?;
    let _lock = run.try_lock()?;
    let mut manifest = run.manifest()?;
    if manifest.stage != Stage::DatasetCandidates {
        return Err(SelectionPostError::Conflict(format!("run is {}, not awaiting a selection", manifest.stage)));
    }
    if selection.accepted {
        let store = match &manifest.config.cards_dir {
            Some(dir) => CardStore::open(dir)?,
            None => CardStore::default(),
        };
        let card = store
            .dataset(&selection.card_id)
            .ok_or_else(|| SelectionPostError::UnknownDataset(selection.card_id.clone()))?;
        selection.validate(&card.columns)?;
    }
    files::write_json(&run.file(SELECTION), &selection).map_err(RunError::from)?;
    advance_locked(&run, &mut manifest).await?;
    Ok(manifest)
}

#[derive(Debug, thiserror::Error)]
pub enum PredictError {
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("run is {0}; predictions need a trained model")]
    NotReady(Stage),
    #[error(transparent)]
    Trainer(#[from] trainer::TrainerError),
}

/// Runs the run's model on `inputs`. Unless `raw`, each input is first
/// textualized with the run's instruction the way generated examples are.
pub fn predict(ws: &Workspace, run_id: &str, inputs: &[String], raw: bool) -> Result<Vec<String>, PredictError> {
    let run = ws.run(run_id)?;
    let manifest = run.manifest()?;
    if !matches!(manifest.stage, Stage::Trained | Stage::Evaluated) {
        return Err(PredictError::NotReady(manifest.stage));
    }
    let texts: Vec<String> = if raw {
        inputs.to_vec()
    } else {
        let parsed: ParsedPrompt = files::read_json(&run.file(PARSED_PROMPT)).map_err(RunError::from)?;
        inputs.iter().map(|i| textualize(&parsed.instruction, &[("input", i)])).collect()
    };
    let artifact = Artifact::load(&run.file(ARTIFACT))?;
    Ok(manifest.config.trainer.backend()?.predict(&artifact, &texts)?)
}

pub fn eval_report(ws: &Workspace, run_id: &str) -> Result<Option<EvalReport>, RunError> {
    let run = ws.run(run_id)?;
    let path = run.file(EVAL_REPORT);
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(files::read_json(&path)?))
}
