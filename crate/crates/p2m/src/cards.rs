//! Local card snapshots and dataset tables.
//!
//! A cards directory holds `datasets.jsonl` and `models.jsonl` (one card per
//! line) plus `data/<card file stem>.jsonl` with one JSON object per row for
//! each dataset that has contents. Card ids containing `/` map to file stems
//! with `__` in its place.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use p2m_core::dataset::{Column, Table};
use p2m_core::{Card, CardKind};

#[derive(Debug, thiserror::Error)]
pub enum CardError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Malformed { path: PathBuf, line: usize, message: String },
    #[error("{path}:{line}: duplicate card id `{id}`")]
    Duplicate { path: PathBuf, line: usize, id: String },
}

fn read(path: &Path) -> Result<String, CardError> {
    std::fs::read_to_string(path).map_err(|source| CardError::Io { path: path.to_owned(), source })
}

/// Parses a snapshot, rejecting unknown fields, wrong kinds, and repeated ids
/// with the offending line number. Blank lines are skipped.
pub fn parse_cards(text: &str, path: &Path, expected: Option<CardKind>) -> Result<Vec<Card>, CardError> {
    const FIELDS: [&str; 7] = ["id", "kind", "description", "downloads", "size_bytes", "columns", "architecture"];
    let mut seen = BTreeSet::new();
    let mut cards = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| CardError::Malformed { path: path.to_owned(), line: line_no, message };
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        let obj = value.as_object().ok_or_else(|| malformed("expected a JSON object".into()))?;
        if let Some(key) = obj.keys().find(|k| !FIELDS.contains(&k.as_str())) {
            return Err(malformed(format!("unknown field `{key}`")));
        }
        let card: Card = serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
        if card.id.is_empty() {
            return Err(malformed("empty card id".into()));
        }
        if let Some(kind) = expected.filter(|k| *k != card.kind) {
            return Err(malformed(format!("expected a {kind:?} card, found {:?}", card.kind).to_lowercase()));
        }
        if !seen.insert(card.id.clone()) {
            return Err(CardError::Duplicate { path: path.to_owned(), line: line_no, id: card.id });
        }
        cards.push(card);
    }
    Ok(cards)
}

pub fn load_cards(path: &Path, expected: Option<CardKind>) -> Result<Vec<Card>, CardError> {
    parse_cards(&read(path)?, path, expected)
}

#[derive(Debug, Clone, Default)]
pub struct CardStore {
    root: PathBuf,
    pub datasets: Vec<Card>,
    pub models: Vec<Card>,
}

impl CardStore {
    /// Loads both snapshots; a missing snapshot file means an empty corpus.
    pub fn open(root: &Path) -> Result<Self, CardError> {
        let load = |name: &str, kind| {
            let path = root.join(name);
            if path.exists() {
                load_cards(&path, Some(kind))
            } else {
                Ok(Vec::new())
            }
        };
        Ok(Self {
            root: root.to_owned(),
            datasets: load("datasets.jsonl", CardKind::Dataset)?,
            models: load("models.jsonl", CardKind::Model)?,
        })
    }

    pub fn dataset(&self, id: &str) -> Option<&Card> {
        self.datasets.iter().find(|c| c.id == id)
    }

    pub fn data_path(&self, card_id: &str) -> PathBuf {
        self.root.join("data").join(format!("{}.jsonl", card_id.replace('/', "__")))
    }

    /// Rows of a dataset card as a table over the card's columns. A card
    /// without a data file yields an empty table.
    pub fn table(&self, card: &Card) -> Result<LoadedTable, CardError> {
        let path = self.data_path(&card.id);
        if !path.exists() {
            return Ok(LoadedTable::empty(&card.columns));
        }
        parse_table(&read(&path)?, &path, &card.columns)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadedTable {
    pub table: Table,
    /// Columns whose every cell is a JSON string.
    pub text_columns: Vec<String>,
}

impl LoadedTable {
    fn empty(columns: &[String]) -> Self {
        Self {
            table: Table {
                columns: columns.iter().map(|name| Column { name: name.clone(), values: Vec::new() }).collect(),
            },
            text_columns: columns.to_vec(),
        }
    }
}

/// Reads JSONL rows into the given column order. Missing cells and nulls
/// become empty strings; other non-string cells keep their JSON text and
/// disqualify the column from being a text column.
pub fn parse_table(text: &str, path: &Path, columns: &[String]) -> Result<LoadedTable, CardError> {
    let mut out = LoadedTable::empty(columns);
    let mut is_text = vec![true; columns.len()];
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| CardError::Malformed { path: path.to_owned(), line: i + 1, message };
        let row: serde_json::Value = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        let row = row.as_object().ok_or_else(|| malformed("expected a JSON object".into()))?;
        for (j, col) in out.table.columns.iter_mut().enumerate() {
            let cell = match row.get(&col.name) {
                Some(serde_json::Value::String(s)) => s.clone(),
                None | Some(serde_json::Value::Null) => String::new(),
                Some(other) => {
                    is_text[j] = false;
                    other.to_string()
                }
            };
            col.values.push(cell);
        }
    }
    out.text_columns = columns.iter().zip(is_text).filter(|(_, t)| *t).map(|(c, _)| c.clone()).collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("cards.jsonl")
    }

    #[test]
    fn parses_cards_and_skips_blank_lines() {
        let text = "{\"id\":\"a\",\"kind\":\"dataset\",\"description\":\"x\",\"columns\":[\"q\",\"a\"]}\n\n\
                    {\"id\":\"b\",\"kind\":\"dataset\"}\n";
        let cards = parse_cards(text, p(), Some(CardKind::Dataset)).unwrap();
        assert_eq!(cards.len(), 2);
        assert_eq!(cards[0].columns, ["q", "a"]);
        assert_eq!(cards[1].description, "");
    }

    #[test]
    fn reports_line_numbers() {
        let text = "{\"id\":\"a\",\"kind\":\"model\"}\n{\"id\":\"b\",\"kind\":\"model\",\"extra\":1}\n";
        let err = parse_cards(text, p(), None).unwrap_err();
        assert!(matches!(err, CardError::Malformed { line: 2, .. }), "{err}");

        let err = parse_cards("{\"id\":\"a\",\"kind\":\"model\"}\nnot json\n", p(), None).unwrap_err();
        assert!(matches!(err, CardError::Malformed { line: 2, .. }));

        let err = parse_cards("{\"id\":\"a\",\"kind\":\"model\"}\n{\"id\":\"a\",\"kind\":\"model\"}", p(), None).unwrap_err();
        assert!(matches!(err, CardError::Duplicate { line: 2, .. }));

        let err = parse_cards("{\"id\":\"a\",\"kind\":\"model\"}", p(), Some(CardKind::Dataset)).unwrap_err();
        assert!(matches!(err, CardError::Malformed { line: 1, .. }));
    }

    #[test]
    fn table_columns_follow_card_order() {
        let cols = vec!["question".to_string(), "answer".to_string(), "score".to_string()];
        let text = "{\"answer\":\"4\",\"question\":\"2+2\",\"score\":1}\n{\"question\":\"3+3\",\"answer\":\"6\"}\n";
        let t = parse_table(text, p(), &cols).unwrap();
        assert_eq!(t.table.row_count(), 2);
        assert_eq!(t.table.column("answer").unwrap().values, ["4", "6"]);
        assert_eq!(t.table.column("score").unwrap().values, ["1", ""]);
        assert_eq!(t.text_columns, ["question", "answer"]);
    }
}
