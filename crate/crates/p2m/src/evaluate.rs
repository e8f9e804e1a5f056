//! Evaluation reports and model-ranking comparison.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use p2m_core::embedding::HashingEmbedder;
use p2m_core::metrics::{
    bertscore, chrf_pp, exact_match, kendall_tau, BertScore, ChrfConfig, MatchMode, MetricError, PValueMethod,
};
use p2m_core::{Example, TokenEmbeddingProvider};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::files::{self, FileError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Em,
    Chrf,
    Bertscore,
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "em" | "exact_match" => Ok(Self::Em),
            "chrf" | "chrf++" | "chrf_pp" => Ok(Self::Chrf),
            "bertscore" => Ok(Self::Bertscore),
            other => Err(format!("unknown metric `{other}` (expected em, chrf or bertscore)")),
        }
    }
}

/// Token embedders selectable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderChoice {
    #[default]
    None,
    Hashing,
}

impl EmbedderChoice {
    pub fn token_embedder(self) -> Option<Box<dyn TokenEmbeddingProvider + Send + Sync>> {
        match self {
            Self::None => None,
            Self::Hashing => Some(Box::new(HashingEmbedder::default())),
        }
    }
}

impl FromStr for EmbedderChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Self::None),
            "hashing" => Ok(Self::Hashing),
            other => Err(format!("unknown embedder `{other}` (expected none or hashing)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub metrics: Vec<Metric>,
    pub exact_match_mode: MatchMode,
    pub chrf: ChrfConfig,
    pub embedder: EmbedderChoice,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            metrics: vec![Metric::Em, Metric::Chrf, Metric::Bertscore],
            exact_match_mode: MatchMode::Strict,
            chrf: ChrfConfig::default(),
            embedder: EmbedderChoice::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricConfigs {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_match_mode: Option<MatchMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chrf: Option<ChrfConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bertscore_embedder: Option<EmbedderChoice>,
}

/// Contents of `eval_report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub artifact_id: Option<String>,
    pub segments: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_match: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chrf_pp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bertscore: Option<BertScore>,
    pub configs: MetricConfigs,
    /// SHA-256 over the references, one per line.
    pub test_fingerprint: String,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn score(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Em => self.exact_match,
            Metric::Chrf => self.chrf_pp,
            Metric::Bertscore => self.bertscore.map(|b| b.f1),
        }
    }
}

pub fn fingerprint<S: AsRef<str>>(references: &[S]) -> String {
    let mut h = Sha256::new();
    for r in references {
        h.update(serde_json::to_string(r.as_ref()).expect("strings serialize").as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Scores `predictions` against `references` with the configured metrics.
/// BERTScore without an embedder is skipped with a warning.
pub fn score<P: AsRef<str>, R: AsRef<str>>(
    predictions: &[P],
    references: &[R],
    opts: &EvalOptions,
    artifact_id: Option<String>,
) -> Result<EvalReport, MetricError> {
    if predictions.len() != references.len() {
        return Err(MetricError::LengthMismatch { predictions: predictions.len(), references: references.len() });
    }
    if references.is_empty() {
        return Err(MetricError::Empty);
    }
    let wants = |m| opts.metrics.contains(&m);
    let mut report = EvalReport {
        artifact_id,
        segments: references.len(),
        exact_match: None,
        chrf_pp: None,
        bertscore: None,
        configs: MetricConfigs { exact_match_mode: None, chrf: None, bertscore_embedder: None },
        test_fingerprint: fingerprint(references),
        warnings: Vec::new(),
    };
    if wants(Metric::Em) {
        report.exact_match = Some(exact_match(predictions, references, opts.exact_match_mode)?);
        report.configs.exact_match_mode = Some(opts.exact_match_mode);
    }
    if wants(Metric::Chrf) {
        report.chrf_pp = Some(chrf_pp(predictions, references, &opts.chrf)?);
        report.configs.chrf = Some(opts.chrf);
    }
    if wants(Metric::Bertscore) {
        match opts.embedder.token_embedder() {
            Some(embedder) => {
                report.bertscore = Some(bertscore(predictions, references, embedder.as_ref())?);
                report.configs.bertscore_embedder = Some(opts.embedder);
            }
            None => report.warnings.push("BERTScore skipped: no token embedder configured".into()),
        }
    }
    Ok(report)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TextLine {
    Plain(String),
    Example(Example),
    Output { output: String },
}

/// Reads a predictions or references file: each line is a JSON string or an
/// object with an `output` field.
pub fn read_texts(path: &Path) -> Result<Vec<String>, FileError> {
    let lines: Vec<TextLine> = files::read_jsonl(path)?;
    Ok(lines
        .into_iter()
        .map(|l| match l {
            TextLine::Plain(s) => s,
            TextLine::Example(e) => e.output,
            TextLine::Output { output } => output,
        })
        .collect())
}

/// Contents of `comparison_report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub model_ids: Vec<String>,
    pub scores_a: Vec<f64>,
    pub scores_b: Vec<f64>,
    pub tau: f64,
    pub p_value: f64,
    pub method: PValueMethod,
}

#[derive(Debug, thiserror::Error)]
pub enum CompareError {
    #[error(transparent)]
    File(#[from] FileError),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Kendall's tau between two rankings of the same models.
pub fn compare(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> Result<ComparisonReport, CompareError> {
    if !a.keys().eq(b.keys()) {
        let only: Vec<&String> = a.keys().filter(|k| !b.contains_key(*k)).chain(b.keys().filter(|k| !a.contains_key(*k))).collect();
        return Err(CompareError::Input(format!("rankings cover different models: {only:?}")));
    }
    let scores_a: Vec<f64> = a.values().copied().collect();
    let scores_b: Vec<f64> = b.values().copied().collect();
    let k = kendall_tau(&scores_a, &scores_b)?;
    Ok(ComparisonReport {
        model_ids: a.keys().cloned().collect(),
        scores_a,
        scores_b,
        tau: k.tau,
        p_value: k.p_value,
        method: k.method,
    })
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RankingFile {
    Scores(BTreeMap<String, f64>),
    Reports(Vec<EvalReport>),
}

/// Reads a ranking: either `{"model": score, ...}` or an array of eval
/// reports keyed by `artifact_id` and scored by `metric`.
pub fn read_ranking(path: &Path, metric: Metric) -> Result<BTreeMap<String, f64>, CompareError> {
    match files::read_json::<RankingFile>(path)? {
        RankingFile::Scores(s) => Ok(s),
        RankingFile::Reports(reports) => {
            let mut out = BTreeMap::new();
            for r in reports {
                let id = r
                    .artifact_id
                    .clone()
                    .ok_or_else(|| CompareError::Input(format!("{}: report without artifact_id", path.display())))?;
                let s = r
                    .score(metric)
                    .ok_or_else(|| CompareError::Input(format!("{}: report {id} lacks {metric:?}", path.display())))?;
                if out.insert(id.clone(), s).is_some() {
                    return Err(CompareError::Input(format!("{}: duplicate artifact_id {id}", path.display())));
                }
            }
            Ok(out)
        }
    }
}
