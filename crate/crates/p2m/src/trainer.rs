//! The external trainer protocol and the in-process memorizing mock.
//!
//! Training: the bridge writes `train_job.json` and runs `<command>
//! <train_job.json>`. The backend writes `artifact.json` next to the job file
//! before exiting. Prediction: `<command> --predict <inputs.jsonl>
//! <outputs.jsonl>` with `P2M_ARTIFACT` pointing at `artifact.json`; each
//! input line is `{"input": ...}` and each output line `{"output": ...}`.

use std::path::{Path, PathBuf};
use std::process::Command;

use p2m_core::{Example, Hyperparameters, MemorizedModel};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::files::{self, FileError};

pub const SCRATCH_MOCK: &str = "scratch-mock";
pub const ARTIFACT_FILE: &str = "artifact.json";
pub const ENV_ARTIFACT: &str = "P2M_ARTIFACT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainJob {
    /// Model card id, or `scratch-mock`.
    pub base_model_id: String,
    pub train_path: PathBuf,
    pub val_path: PathBuf,
    /// Directory the backend may fill with weights and logs.
    pub output_dir: PathBuf,
    pub hyperparameters: Hyperparameters,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArtifactStatus {
    Ok,
    Failed,
}

fn one() -> usize {
    1
}

/// Contents of `artifact.json`. Relative paths resolve against the directory
/// holding the file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactManifest {
    #[serde(default)]
    pub artifact_id: String,
    #[serde(default = "external")]
    pub backend: BackendKind,
    pub artifact_path: PathBuf,
    pub log_path: PathBuf,
    pub status: ArtifactStatus,
    /// Predict calls the backend accepts at once.
    #[serde(default = "one")]
    pub predict_concurrency: usize,
}

fn external() -> BackendKind {
    BackendKind::External
}

/// A loaded `artifact.json`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub manifest: ArtifactManifest,
    pub manifest_path: PathBuf,
}

impl Artifact {
    pub fn load(manifest_path: &Path) -> Result<Self, TrainerError> {
        let manifest = files::read_json(manifest_path)
            .map_err(|e| TrainerError::ArtifactUnavailable(format!("{}: {e}", manifest_path.display())))?;
        Ok(Self { manifest, manifest_path: manifest_path.to_owned() })
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        match self.manifest_path.parent() {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_owned(),
        }
    }

    pub fn artifact_path(&self) -> PathBuf {
        self.resolve(&self.manifest.artifact_path)
    }

    pub fn log_path(&self) -> PathBuf {
        self.resolve(&self.manifest.log_path)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainerError {
    #[error("invalid train job: {0}")]
    InvalidJob(String),
    #[error(transparent)]
    File(#[from] FileError),
    #[error("trainer crashed: {reason} (log: {log_path})")]
    TrainerCrashed { reason: String, log_path: PathBuf },
    #[error("artifact failed the probe prediction: {0}")]
    ArtifactProbeFailed(String),
    #[error("artifact unavailable: {0}")]
    ArtifactUnavailable(String),
}

pub trait TrainerBackend: Send + Sync {
    fn kind(&self) -> BackendKind;

    /// Runs the job described by `job_path`; on success `artifact.json`
    /// exists next to it.
    fn run_train(&self, job_path: &Path, job: &TrainJob) -> Result<(), TrainerError>;

    /// One output per input, in order.
    fn predict(&self, artifact: &Artifact, inputs: &[String]) -> Result<Vec<String>, TrainerError>;
}

/// Writes the job, runs the backend, loads `artifact.json` and checks that
/// the artifact answers a probe.
pub fn train(job: &TrainJob, job_path: &Path, backend: &dyn TrainerBackend) -> Result<Artifact, TrainerError> {
    if !job.hyperparameters.is_valid() {
        return Err(TrainerError::InvalidJob("learning_rate must be positive and epochs, batch_size at least 1".into()));
    }
    if !job.train_path.is_absolute() || !job.val_path.is_absolute() {
        return Err(TrainerError::InvalidJob("data paths must be absolute".into()));
    }
    files::write_json(job_path, job)?;
    let manifest_path = job_path.with_file_name(ARTIFACT_FILE);
    backend.run_train(job_path, job)?;
    if !manifest_path.exists() {
        return Err(TrainerError::TrainerCrashed {
            reason: "backend exited without writing artifact.json".into(),
            log_path: job.output_dir.clone(),
        });
    }
    let artifact = Artifact::load(&manifest_path)?;
    if artifact.manifest.status != ArtifactStatus::Ok {
        return Err(TrainerError::TrainerCrashed { reason: "artifact status is failed".into(), log_path: artifact.log_path() });
    }
    match backend.predict(&artifact, &["probe".to_owned()]) {
        Ok(out) if out.len() == 1 => Ok(artifact),
        Ok(out) => Err(TrainerError::ArtifactProbeFailed(format!("expected 1 output, got {}", out.len()))),
        Err(e) => Err(TrainerError::ArtifactProbeFailed(e.to_string())),
    }
}

/// Trains a [`MemorizedModel`] in process.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockTrainer;

impl MockTrainer {
    fn load_model(artifact: &Artifact) -> Result<MemorizedModel, TrainerError> {
        let path = artifact.artifact_path().join("model.json");
        files::read_json(&path).map_err(|e| TrainerError::ArtifactUnavailable(e.to_string()))
    }
}

impl TrainerBackend for MockTrainer {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn run_train(&self, job_path: &Path, job: &TrainJob) -> Result<(), TrainerError> {
        let train: Vec<Example> = files::read_jsonl(&job.train_path)?;
        if train.is_empty() {
            return Err(TrainerError::InvalidJob("train split is empty".into()));
        }
        let model = MemorizedModel::train(&train);
        let model_json = serde_json::to_vec(&model).expect("in-memory serialization");
        std::fs::create_dir_all(&job.output_dir).map_err(|e| FileError::io(&job.output_dir, e))?;
        files::write_atomic(&job.output_dir.join("model.json"), &model_json)?;
        let log = format!(
            "backend: mock\nbase_model_id: {}\ntrain_examples: {}\nmemorized_inputs: {}\noptimizer: {}\nlearning_rate: {}\nepochs: {}\nbatch_size: {}\nseed: {}\n",
            job.base_model_id,
            train.len(),
            model.len(),
            job.hyperparameters.optimizer,
            job.hyperparameters.learning_rate,
            job.hyperparameters.epochs,
            job.hyperparameters.batch_size,
            job.seed,
        );
        files::write_atomic(&job.output_dir.join("train.log"), log.as_bytes())?;

        let dir = job_path.parent().unwrap_or(Path::new("."));
        let rel = |p: PathBuf| p.strip_prefix(dir).map(Path::to_owned).unwrap_or(p);
        let manifest = ArtifactManifest {
            artifact_id: format!("mock-{}", &hex::encode(Sha256::digest(&model_json))[..16]),
            backend: BackendKind::Mock,
            artifact_path: rel(job.output_dir.clone()),
            log_path: rel(job.output_dir.join("train.log")),
            status: ArtifactStatus::Ok,
            predict_concurrency: 8,
        };
        files::write_json(&job_path.with_file_name(ARTIFACT_FILE), &manifest)?;
        Ok(())
    }

    fn predict(&self, artifact: &Artifact, inputs: &[String]) -> Result<Vec<String>, TrainerError> {
        Ok(Self::load_model(artifact)?.predict(inputs))
    }
}

/// Runs an external program that speaks the trainer protocol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandTrainer {
    /// Program and leading arguments, e.g. `["python3", "shim.py"]`.
    pub argv: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct InputLine {
    input: String,
}

#[derive(Serialize, Deserialize)]
struct OutputLine {
    output: String,
}

impl CommandTrainer {
    pub fn new(argv: Vec<String>) -> Result<Self, TrainerError> {
        if argv.is_empty() {
            return Err(TrainerError::InvalidJob("empty trainer command".into()));
        }
        Ok(Self { argv })
    }

    fn command(&self) -> Command {
        let mut cmd = Command::new(&self.argv[0]);
        cmd.args(&self.argv[1..]);
        cmd
    }
}

impl TrainerBackend for CommandTrainer {
    fn kind(&self) -> BackendKind {
        BackendKind::External
    }

    fn run_train(&self, job_path: &Path, job: &TrainJob) -> Result<(), TrainerError> {
        std::fs::create_dir_all(&job.output_dir).map_err(|e| FileError::io(&job.output_dir, e))?;
        let log_path = job_path.with_file_name("trainer_output.log");
        let out = self.command().arg(job_path).output().map_err(|e| TrainerError::TrainerCrashed {
            reason: format!("cannot start `{}`: {e}", self.argv[0]),
            log_path: log_path.clone(),
        })?;
        let mut log = out.stdout;
        log.extend_from_slice(&out.stderr);
        files::write_atomic(&log_path, &log)?;
        if !out.status.success() {
            return Err(TrainerError::TrainerCrashed { reason: format!("trainer exited with {}", out.status), log_path });
        }
        Ok(())
    }

    fn predict(&self, artifact: &Artifact, inputs: &[String]) -> Result<Vec<String>, TrainerError> {
        let dir = tempfile::tempdir().map_err(|e| TrainerError::ArtifactUnavailable(e.to_string()))?;
        let in_path = dir.path().join("inputs.jsonl");
        let out_path = dir.path().join("outputs.jsonl");
        let lines: Vec<InputLine> = inputs.iter().map(|i| InputLine { input: i.clone() }).collect();
        files::write_jsonl(&in_path, &lines)?;
        let out = self
            .command()
            .arg("--predict")
            .arg(&in_path)
            .arg(&out_path)
            .env(ENV_ARTIFACT, &artifact.manifest_path)
            .output()
            .map_err(|e| TrainerError::ArtifactUnavailable(e.to_string()))?;
        if !out.status.success() {
            return Err(TrainerError::ArtifactUnavailable(format!(
                "predict exited with {}: {}",
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let outputs: Vec<OutputLine> = files::read_jsonl(&out_path)?;
        if outputs.len() != inputs.len() {
            return Err(TrainerError::ArtifactUnavailable(format!(
                "predict wrote {} lines for {} inputs",
                outputs.len(),
                inputs.len()
            )));
        }
        Ok(outputs.into_iter().map(|o| o.output).collect())
    }
}
