//! Augmentation cache: a `%BIGCACHE v1` header line followed by one JSON
//! object per group.
//!
//! Only synthesized text is stored. Reading joins records back onto the
//! question groups they were produced from.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{AugmentStatus, AugmentedGroup, QuestionGroup, Text};

pub const CACHE_HEADER: &str = "%BIGCACHE v1";
const CACHE_MAGIC: &str = "%BIGCACHE";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CacheRecord {
    question_id: String,
    status: Status,
    synth_answer: Option<String>,
    synth_questions: Vec<(usize, String)>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Status {
    Complete,
    Failed,
}

pub fn write_cache<W: Write>(augmented: &[AugmentedGroup], mut out: W) -> Result<()> {
    writeln!(out, "{CACHE_HEADER}")?;
    for g in augmented {
        let record = CacheRecord {
            question_id: g.base.question_id.clone(),
            status: match g.status {
                AugmentStatus::Complete => Status::Complete,
                AugmentStatus::Failed => Status::Failed,
            },
            synth_answer: g.synth_answer.as_ref().map(|t| t.raw().to_owned()),
            synth_questions: g
                .synth_questions
                .iter()
                .map(|(j, t)| (*j, t.raw().to_owned()))
                .collect(),
        };
        let line = serde_json::to_string(&record).expect("cache record serializes");
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a cache and attaches each record to the group with the same
/// question id. Groups without a record are absent from the result.
pub fn read_cache<R: BufRead>(reader: R, groups: &[QuestionGroup]) -> Result<Vec<AugmentedGroup>> {
    let by_id: HashMap<&str, &QuestionGroup> =
        groups.iter().map(|g| (g.question_id.as_str(), g)).collect();
    let mut lines = reader.lines();
    match lines.next().transpose()? {
        Some(h) if h.trim_end() == CACHE_HEADER => {}
        Some(h) if h.starts_with(CACHE_MAGIC) => {
            return Err(Error::parse(
                1,
                format!("unsupported cache version {:?}, expected {CACHE_HEADER:?}", h.trim_end()),
            ))
        }
        _ => return Err(Error::parse(1, format!("missing {CACHE_HEADER:?} header"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CacheRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(line_no, format!("malformed cache record: {e}")))?;
        let base = by_id.get(rec.question_id.as_str()).ok_or_else(|| {
            Error::parse(line_no, format!("unknown question id {:?}", rec.question_id))
        })?;
        let mut synth_questions = Vec::with_capacity(rec.synth_questions.len());
        for (j, raw) in rec.synth_questions {
            if j >= base.negatives.len() {
                return Err(Error::parse(
                    line_no,
                    format!(
                        "negative index {j} out of range for question {} with {} negatives",
                        rec.question_id,
                        base.negatives.len()
                    ),
                ));
            }
            synth_questions.push((j, Text::new(raw)));
        }
        out.push(AugmentedGroup {
            base: (*base).clone(),
            synth_answer: rec.synth_answer.map(Text::new),
            synth_questions,
            status: match rec.status {
                Status::Complete => AugmentStatus::Complete,
                Status::Failed => AugmentStatus::Failed,
            },
        });
    }
    Ok(out)
}

pub fn write_cache_file(augmented: &[AugmentedGroup], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::file(path, e))?;
    write_cache(augmented, BufWriter::new(file))
}

pub fn read_cache_file(path: &Path, groups: &[QuestionGroup]) -> Result<Vec<AugmentedGroup>> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    read_cache(BufReader::new(file), groups)
}
