//! Dataset-card ranking and input/output column selection.
//!
//! Ranking uses an [`EmbeddingProvider`] when one is available (cosine of
//! unit vectors) and falls back to BM25 otherwise. Selecting a dataset is a
//! plain data exchange: the ranker emits [`ScoredCard`]s and the caller
//! returns a [`DatasetSelection`], either from a human or from
//! [`auto_select`].

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, EmbeddingProvider};
use crate::retrieval::{tokenize, Bm25Index, Bm25Params, Card, CardKind, RetrievalError};

/// Number of dataset candidates shown to the user by default.
pub const DEFAULT_TOP_K: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scorer {
    Embedding,
    Bm25,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCard {
    pub id: String,
    pub score: f64,
    pub scorer: Scorer,
}

/// Result of [`rank_datasets`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetRanking {
    pub candidates: Vec<ScoredCard>,
    /// Set when the corpus held no dataset cards.
    pub empty_corpus: bool,
    pub warnings: Vec<String>,
}

/// Score descending, then id ascending.
pub fn by_score_then_id(a: &ScoredCard, b: &ScoredCard) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id))
}

/// Ranks the dataset cards of `corpus` against `instruction` and keeps the top `k`.
pub fn rank_datasets(
    instruction: &str,
    corpus: &[Card],
    embedder: Option<&dyn EmbeddingProvider>,
    k: usize,
) -> Result<DatasetRanking, RetrievalError> {
    let datasets: Vec<&Card> = corpus.iter().filter(|c| c.kind == CardKind::Dataset).collect();
    let mut ranking = DatasetRanking::default();
    if datasets.is_empty() {
        ranking.empty_corpus = true;
        return Ok(ranking);
    }

    let mut scored = None;
    if let Some(embedder) = embedder {
        match embed_scores(instruction, &datasets, embedder) {
            Ok(s) => scored = Some(s),
            Err(e) => ranking.warnings.push(format!("{e}; falling back to BM25")),
        }
    }
    let mut scored = match scored {
        Some(s) => s,
        None => {
            let index = Bm25Index::build(datasets.iter().copied(), Bm25Params::default())?;
            let query = tokenize(instruction);
            index
                .score_all(&query)
                .into_iter()
                .map(|(id, score)| ScoredCard { id: id.into(), score, scorer: Scorer::Bm25 })
                .collect()
        }
    };
    scored.sort_by(by_score_then_id);
    scored.truncate(k);
    ranking.candidates = scored;
    Ok(ranking)
}

fn embed_scores(
    instruction: &str,
    datasets: &[&Card],
    embedder: &dyn EmbeddingProvider,
) -> Result<Vec<ScoredCard>, crate::embedding::EmbedError> {
    let query = embedder.embed(instruction)?;
    let mut seen = alloc::collections::BTreeSet::new();
    datasets
        .iter()
        .map(|card| {
            if !seen.insert(card.id.as_str()) {
                return Err(crate::embedding::EmbedError(format!("duplicate card id `{}`", card.id)));
            }
            let v = embedder.embed(&card.description)?;
            Ok(ScoredCard { id: card.id.clone(), score: cosine(&query, &v), scorer: Scorer::Embedding })
        })
        .collect()
}

/// The user's choice among the ranked datasets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSelection {
    pub card_id: String,
    pub input_columns: Vec<String>,
    pub output_column: String,
    /// False means none of the candidates fit.
    pub accepted: bool,
}

impl DatasetSelection {
    pub fn none_selected() -> Self {
        Self {
            card_id: String::new(),
            input_columns: Vec::new(),
            output_column: String::new(),
            accepted: false,
        }
    }

    /// Checks the selection against the columns the card advertises.
    pub fn validate(&self, columns: &[String]) -> Result<(), SelectionError> {
        if !self.accepted {
            return Ok(());
        }
        if self.input_columns.is_empty() {
            return Err(SelectionError::NoInputColumns);
        }
        if self.input_columns.contains(&self.output_column) {
            return Err(SelectionError::OutputAmongInputs(self.output_column.clone()));
        }
        for col in self.input_columns.iter().chain(core::iter::once(&self.output_column)) {
            if !columns.contains(col) {
                return Err(SelectionError::MissingColumn(col.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SelectionError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("output column `{0}` is also an input column")]
    OutputAmongInputs(String),
    #[error("selection has no input columns")]
    NoInputColumns,
    #[error("column `{column}` has {found} rows, expected {expected}")]
    RaggedTable { column: String, expected: usize, found: usize },
}

/// Column-oriented table of string cells.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<Column>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub values: Vec<String>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn row_count(&self) -> usize {
        self.columns.first().map_or(0, |c| c.values.len())
    }
}

/// One retrieved row: the chosen input fields, in selection order, and the output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub fields: Vec<(String, String)>,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RetrievedRecords {
    pub records: Vec<RawRecord>,
    /// Set when the user declined every candidate.
    pub none_selected: bool,
}

/// Projects `table` onto the selected columns, one record per row in order.
pub fn apply_selection(selection: &DatasetSelection, table: &Table) -> Result<RetrievedRecords, SelectionError> {
    if !selection.accepted {
        return Ok(RetrievedRecords { records: Vec::new(), none_selected: true });
    }
    if selection.input_columns.is_empty() {
        return Err(SelectionError::NoInputColumns);
    }
    if selection.input_columns.contains(&selection.output_column) {
        return Err(SelectionError::OutputAmongInputs(selection.output_column.clone()));
    }
    let lookup = |name: &String| table.column(name).ok_or_else(|| SelectionError::MissingColumn(name.clone()));
    let inputs = selection.input_columns.iter().map(lookup).collect::<Result<Vec<_>, _>>()?;
    let output = lookup(&selection.output_column)?;

    let rows = output.values.len();
    for col in &inputs {
        if col.values.len() != rows {
            return Err(SelectionError::RaggedTable {
                column: col.name.clone(),
                expected: rows,
                found: col.values.len(),
            });
        }
    }
    let records = (0..rows)
        .map(|row| RawRecord {
            fields: inputs.iter().map(|c| (c.name.clone(), c.values[row].clone())).collect(),
            output: output.values[row].clone(),
        })
        .collect();
    Ok(RetrievedRecords { records, none_selected: false })
}

/// Headless column choice: the longest-named text column becomes the input
/// and the first remaining text column (in card order) the output.
///
/// Returns a "none selected" marker when fewer than two text columns exist.
pub fn auto_select(card: &Card, text_columns: &[String]) -> DatasetSelection {
    let candidates: Vec<&String> = card.columns.iter().filter(|c| text_columns.contains(c)).collect();
    if candidates.len() < 2 {
        return DatasetSelection::none_selected();
    }
    // First of the longest names wins ties.
    let input = candidates
        .iter()
        .copied()
        .reduce(|best, c| if c.chars().count() > best.chars().count() { c } else { best })
        .expect("at least two candidates");
    let output = candidates.iter().copied().find(|c| *c != input).expect("at least two candidates");
    DatasetSelection {
        card_id: card.id.clone(),
        input_columns: alloc::vec![input.clone()],
        output_column: output.clone(),
        accepted: true,
    }
}
