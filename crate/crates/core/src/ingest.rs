//! Dataset files and corpus statistics.
//!
//! The on-disk format is UTF-8 text with one record per line and four
//! delimiter-separated fields: `question_id`, `question`, `answer`, `label`.
//! Blank lines and lines starting with `#` are skipped.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::text::{group_pairs, Label, QAPair, Text, DEFAULT_GRADED_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    /// Labels are 0 or 1.
    Binary,
    /// Labels are grades in `0..=4`, binarized at `graded_threshold`.
    Graded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetSchema {
    pub label_kind: LabelKind,
    pub graded_threshold: u8,
    pub delimiter: char,
}

impl Default for DatasetSchema {
    fn default() -> Self {
        DatasetSchema {
            label_kind: LabelKind::Binary,
            graded_threshold: DEFAULT_GRADED_THRESHOLD,
            delimiter: '\t',
        }
    }
}

impl DatasetSchema {
    pub fn graded() -> Self {
        DatasetSchema {
            label_kind: LabelKind::Graded,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.graded_threshold) {
            return Err(Error::Config(format!(
                "graded threshold {} outside 1..=4",
                self.graded_threshold
            )));
        }
        Ok(())
    }

    fn parse_label(&self, field: &str, line: usize) -> Result<Label> {
        let value: u8 = field
            .trim()
            .parse()
            .map_err(|_| Error::parse(line, format!("label {field:?} is not an integer")))?;
        match self.label_kind {
            LabelKind::Binary if value <= 1 => Ok(Label::binary(value == 1)),
            LabelKind::Binary => Err(Error::parse(
                line,
                format!("binary label {value} outside {{0,1}}"),
            )),
            LabelKind::Graded => Label::graded(value, self.graded_threshold)
                .map_err(|_| Error::parse(line, format!("graded label {value} outside 0..=4"))),
        }
    }
}

/// Parses a dataset stream. The first malformed line aborts with its
/// 1-based line number.
pub fn parse_dataset<R: BufRead>(reader: R, schema: &DatasetSchema) -> Result<Vec<QAPair>> {
    schema.validate()?;
    let mut pairs = Vec::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(schema.delimiter).collect();
        if fields.len() != 4 {
            return Err(Error::parse(
                line_no,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        }
        let question_id = fields[0].trim();
        if question_id.is_empty() {
            return Err(Error::parse(line_no, "empty question id"));
        }
        let question = Text::new(fields[1]);
        if question.is_empty() {
            return Err(Error::parse(line_no, "question has no tokens"));
        }
        let answer = Text::new(fields[2]);
        if answer.is_empty() {
            return Err(Error::parse(line_no, "answer has no tokens"));
        }
        let label = schema.parse_label(fields[3], line_no)?;
        if !seen.insert((question_id.to_owned(), answer.raw().to_owned())) {
            log::warn!("line {line_no}: duplicate answer for question {question_id}");
        }
        pairs.push(QAPair {
            question_id: question_id.to_owned(),
            question,
            answer,
            label,
        });
    }
    Ok(pairs)
}

pub fn parse_str(input: &str, schema: &DatasetSchema) -> Result<Vec<QAPair>> {
    parse_dataset(input.as_bytes(), schema)
}

pub fn load_dataset(path: &Path, schema: &DatasetSchema) -> Result<Vec<QAPair>> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    parse_dataset(BufReader::new(file), schema)
}

/// Writes pairs back in the dataset format. Graded labels keep their grade.
pub fn serialize_dataset(pairs: &[QAPair], schema: &DatasetSchema) -> String {
    let d = schema.delimiter;
    let mut out = String::new();
    for p in pairs {
        let label = match p.label.grade() {
            Some(g) => g,
            None => p.label.binary_value(),
        };
        out.push_str(&format!(
            "{}{d}{}{d}{}{d}{}\n",
            p.question_id,
            p.question.raw(),
            p.answer.raw(),
            label
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub n_questions: usize,
    pub n_pairs: usize,
    pub pct_positive: f64,
    pub n_questions_with_positive: usize,
}

pub fn compute_stats(pairs: &[QAPair]) -> Result<DatasetStats> {
    let groups = group_pairs(pairs)?;
    let n_pos = pairs.iter().filter(|p| p.label.is_relevant()).count();
    Ok(DatasetStats {
        n_questions: groups.len(),
        n_pairs: pairs.len(),
        pct_positive: 100.0 * n_pos as f64 / pairs.len() as f64,
        n_questions_with_positive: groups.iter().filter(|g| g.has_positive()).count(),
    })
}

impl DatasetStats {
    pub fn to_table(&self) -> String {
        let rows = [
            ("questions", self.n_questions.to_string()),
            ("qa pairs", self.n_pairs.to_string()),
            ("% positive", format!("{:.1}", self.pct_positive)),
            (
                "questions with positive",
                self.n_questions_with_positive.to_string(),
            ),
        ];
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        rows.iter()
            .map(|(k, v)| format!("{k:<width$}  {v:>8}\n"))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("stats serialize")
    }
}
