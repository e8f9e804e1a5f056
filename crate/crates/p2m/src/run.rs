//! Run workspaces: manifests, the event log, and the per-run lock.
//!
//! Each run lives in `<workspace>/<run id>/`. Every file is replaced
//! atomically, so a reader never sees a half-written manifest.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::files::{self, FileError};

pub const MANIFEST: &str = "manifest.json";
pub const EVENTS: &str = "events.log";
const LOCK: &str = ".lock";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Parsed,
    DatasetCandidates,
    DatasetSelected,
    Generated,
    ModelCandidates,
    Trained,
    Evaluated,
    Failed,
}

impl Stage {
    pub const ORDER: [Stage; 7] = [
        Stage::Parsed,
        Stage::DatasetCandidates,
        Stage::DatasetSelected,
        Stage::Generated,
        Stage::ModelCandidates,
        Stage::Trained,
        Stage::Evaluated,
    ];

    pub fn next(self) -> Option<Stage> {
        let i = Self::ORDER.iter().position(|s| *s == self)?;
        Self::ORDER.get(i + 1).copied()
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Stage::Evaluated | Stage::Failed)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Parsed => "parsed",
            Stage::DatasetCandidates => "dataset_candidates",
            Stage::DatasetSelected => "dataset_selected",
            Stage::Generated => "generated",
            Stage::ModelCandidates => "model_candidates",
            Stage::Trained => "trained",
            Stage::Evaluated => "evaluated",
            Stage::Failed => "failed",
        }
    }
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ORDER
            .iter()
            .chain([Stage::Failed].iter())
            .find(|st| st.as_str() == s)
            .copied()
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Contents of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub stage: Stage,
    /// Interactive run waiting for a posted dataset selection.
    #[serde(default)]
    pub awaiting_selection: bool,
    /// The user (or auto mode) declined every dataset candidate.
    #[serde(default)]
    pub none_selected: bool,
    /// Stage to resume from after a failure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_good_stage: Option<Stage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    /// Milliseconds since the epoch at which each stage was reached.
    #[serde(default)]
    pub timestamps: BTreeMap<Stage, u64>,
    pub config: RunConfig,
    /// Artifact name to path relative to the run directory.
    #[serde(default)]
    pub artifacts: BTreeMap<String, String>,
    #[serde(default)]
    pub warnings: Vec<String>,
    /// Event log lines that belong to completed stages.
    #[serde(default)]
    pub events_committed: u64,
}

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub ts_ms: u64,
    pub stage: Stage,
    pub kind: String,
    #[serde(default)]
    pub data: serde_json::Value,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("workspace {path} is not writable: {source}")]
    WorkspaceUnwritable { path: PathBuf, source: std::io::Error },
    #[error("no run `{0}`")]
    UnknownRun(String),
    #[error("run `{0}` is being advanced by another process")]
    Busy(String),
    #[error("invalid transition: {0}")]
    InvalidTransition(String),
    #[error(transparent)]
    File(#[from] FileError),
}

#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

fn valid_run_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Makes a fresh run directory. Ids sort by creation time; the random
    /// suffix and `create_dir` keep them unique.
    pub fn create_run_dir(&self) -> Result<RunDir, RunError> {
        let unwritable = |source| RunError::WorkspaceUnwritable { path: self.root.clone(), source };
        fs::create_dir_all(&self.root).map_err(unwritable)?;
        loop {
            let id = format!("r{:013}-{:04x}", now_ms(), rand::rng().random::<u16>());
            let path = self.root.join(&id);
            match fs::create_dir(&path) {
                Ok(()) => return Ok(RunDir { id, path }),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(unwritable(e)),
            }
        }
    }

    pub fn run(&self, id: &str) -> Result<RunDir, RunError> {
        let path = self.root.join(id);
        if !valid_run_id(id) || !path.join(MANIFEST).is_file() {
            return Err(RunError::UnknownRun(id.into()));
        }
        Ok(RunDir { id: id.into(), path })
    }

    /// Run ids in creation order.
    pub fn list(&self) -> Result<Vec<String>, RunError> {
        let entries = match fs::read_dir(&self.root) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(FileError::io(&self.root, e).into()),
        };
        let mut ids: Vec<String> = entries
            .filter_map(Result::ok)
            .filter(|e| e.path().join(MANIFEST).is_file())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|id| valid_run_id(id))
            .collect();
        ids.sort();
        Ok(ids)
    }
}

#[derive(Debug, Clone)]
pub struct RunDir {
    pub id: String,
    pub path: PathBuf,
}

/// Exclusive advisory lock on one run, released on drop.
#[derive(Debug)]
pub struct RunLock {
    _file: File,
}

impl RunDir {
    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn manifest(&self) -> Result<RunManifest, RunError> {
        Ok(files::read_json(&self.file(MANIFEST))?)
    }

    pub fn save_manifest(&self, manifest: &RunManifest) -> Result<(), RunError> {
        Ok(files::write_json(&self.file(MANIFEST), manifest)?)
    }

    pub fn try_lock(&self) -> Result<RunLock, RunError> {
        let path = self.file(LOCK);
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(|e| FileError::io(&path, e))?;
        match file.try_lock() {
            Ok(()) => Ok(RunLock { _file: file }),
            Err(fs::TryLockError::WouldBlock) => Err(RunError::Busy(self.id.clone())),
            Err(fs::TryLockError::Error(e)) => Err(FileError::io(&path, e).into()),
        }
    }

    pub fn events(&self) -> Result<Vec<Event>, RunError> {
        let path = self.file(EVENTS);
        if !path.exists() {
            return Ok(Vec::new());
        }
        Ok(files::read_jsonl(&path)?)
    }

    /// Drops events past the first `keep` lines. Used to discard the events
    /// of an interrupted stage before it runs again.
    pub fn truncate_events(&self, keep: u64) -> Result<(), RunError> {
        let path = self.file(EVENTS);
        if !path.exists() {
            return Ok(());
        }
        let text = fs::read_to_string(&path).map_err(|e| FileError::io(&path, e))?;
        let kept: String = text.split_inclusive('\n').take(keep as usize).collect();
        if kept.len() != text.len() {
            files::write_atomic(&path, kept.as_bytes())?;
        }
        Ok(())
    }

    pub fn event_count(&self) -> Result<u64, RunError> {
        let path = self.file(EVENTS);
        match fs::read_to_string(&path) {
            Ok(text) => Ok(text.lines().filter(|l| !l.trim().is_empty()).count() as u64),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(0),
            Err(e) => Err(FileError::io(&path, e).into()),
        }
    }

    pub fn append_event(&self, stage: Stage, kind: &str, data: serde_json::Value) -> Result<Event, RunError> {
        let event = Event { seq: self.event_count()?, ts_ms: now_ms(), stage, kind: kind.into(), data };
        let path = self.file(EVENTS);
        let mut line = serde_json::to_vec(&event).expect("in-memory serialization");
        line.push(b'\n');
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| FileError::io(&path, e))?;
        f.write_all(&line).map_err(|e| FileError::io(&path, e))?;
        Ok(event)
    }
}
