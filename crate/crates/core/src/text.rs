//! Shared domain types: tokenized text, relevance labels, question groups and
//! scored rankings.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};

/// Characters mapped to spaces before splitting.
pub const PUNCTUATION: &[char] = &['.', ',', '!', '?', ';', ':', '"', '\'', '(', ')', '[', ']'];

/// Default grade at or above which a graded label counts as relevant.
pub const DEFAULT_GRADED_THRESHOLD: u8 = 3;

/// A string together with its deterministic tokenization.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Text {
    raw: String,
    tokens: Vec<String>,
}

impl Text {
    pub fn new(raw: impl Into<String>) -> Self {
        let raw = raw.into();
        let tokens = split_tokens(&raw);
        Text { raw, tokens }
    }

    /// Builds a text whose raw form is the space-joined tokens.
    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Self {
        Text::new(
            tokens
                .iter()
                .map(|t| t.as_ref())
                .collect::<Vec<_>>()
                .join(" "),
        )
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Keeps at most `max_tokens` tokens. A text that already fits is
    /// returned unchanged; otherwise the raw form becomes the joined prefix.
    pub fn truncated(&self, max_tokens: usize) -> Text {
        if self.tokens.len() <= max_tokens {
            self.clone()
        } else {
            Text::from_tokens(&self.tokens[..max_tokens])
        }
    }
}

impl fmt::Display for Text {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

fn split_tokens(raw: &str) -> Vec<String> {
    raw.to_lowercase()
        .chars()
        .map(|c| if PUNCTUATION.contains(&c) { ' ' } else { c })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

/// Lowercases, maps [`PUNCTUATION`] to spaces and splits on whitespace.
///
/// Whitespace-only input yields a text with no tokens; dataset loaders reject it.
pub fn tokenize(raw: &str) -> Text {
    Text::new(raw)
}

/// Relevance label. `binary` is always set; `graded` only for multi-level data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Label {
    graded: Option<u8>,
    binary: u8,
}

impl Label {
    pub fn binary(relevant: bool) -> Self {
        Label {
            graded: None,
            binary: relevant as u8,
        }
    }

    /// A graded label in `0..=4`, relevant when `grade >= threshold`.
    pub fn graded(grade: u8, threshold: u8) -> Result<Self> {
        if grade > 4 {
            return Err(Error::Data(format!("grade {grade} outside 0..=4")));
        }
        Ok(Label {
            graded: Some(grade),
            binary: (grade >= threshold) as u8,
        })
    }

    pub fn grade(&self) -> Option<u8> {
        self.graded
    }

    /// Grade used for gain computations: the graded value, or the binary one.
    pub fn gain_grade(&self) -> u8 {
        self.graded.unwrap_or(self.binary)
    }

    pub fn is_relevant(&self) -> bool {
        self.binary == 1
    }

    pub fn binary_value(&self) -> u8 {
        self.binary
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QAPair {
    pub question_id: String,
    pub question: Text,
    pub answer: Text,
    pub label: Label,
}

/// A question with its relevant (A⁺) and irrelevant (A⁻) candidate answers.
///
/// `answer_order` records, for every candidate in original file order, which
/// side it landed on, so candidate indices survive the partition.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionGroup {
    pub question_id: String,
    pub question: Text,
    pub positives: Vec<Text>,
    pub negatives: Vec<Text>,
    pub candidates: Vec<Candidate>,
}

/// One candidate answer in original order.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub answer: Text,
    pub label: Label,
}

impl QuestionGroup {
    pub fn new(question_id: impl Into<String>, question: Text) -> Self {
        QuestionGroup {
            question_id: question_id.into(),
            question,
            positives: Vec::new(),
            negatives: Vec::new(),
            candidates: Vec::new(),
        }
    }

    pub fn push(&mut self, answer: Text, label: Label) {
        if label.is_relevant() {
            self.positives.push(answer.clone());
        } else {
            self.negatives.push(answer.clone());
        }
        self.candidates.push(Candidate { answer, label });
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn has_positive(&self) -> bool {
        !self.positives.is_empty()
    }

    /// Flattens back to pairs in candidate order.
    pub fn pairs(&self) -> impl Iterator<Item = QAPair> + '_ {
        self.candidates.iter().map(|c| QAPair {
            question_id: self.question_id.clone(),
            question: self.question.clone(),
            answer: c.answer.clone(),
            label: c.label,
        })
    }
}

/// Partitions pairs into question groups, keeping first-seen question order
/// and per-question answer order.
pub fn group_pairs(pairs: &[QAPair]) -> Result<Vec<QuestionGroup>> {
    if pairs.is_empty() {
        return Err(Error::Empty("no QA pairs to group"));
    }
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut groups: Vec<QuestionGroup> = Vec::new();
    for pair in pairs {
        let slot = match index.get(pair.question_id.as_str()) {
            Some(&i) => {
                if groups[i].question.raw() != pair.question.raw() {
                    return Err(Error::Data(format!(
                        "question id {} has conflicting texts {:?} and {:?}",
                        pair.question_id,
                        groups[i].question.raw(),
                        pair.question.raw()
                    )));
                }
                i
            }
            None => {
                index.insert(&pair.question_id, groups.len());
                groups.push(QuestionGroup::new(
                    pair.question_id.clone(),
                    pair.question.clone(),
                ));
                groups.len() - 1
            }
        };
        groups[slot].push(pair.answer.clone(), pair.label);
    }
    Ok(groups)
}

/// Outcome of running augmentation on one group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentStatus {
    Complete,
    /// Generation failed; the group trains with the plain pairwise terms.
    Failed,
}

/// A question group plus its synthesized pseudo-positives: one answer a* for
/// the question and one question q* per negative answer.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedGroup {
    pub base: QuestionGroup,
    pub synth_answer: Option<Text>,
    /// `(negative_index, q*)`, aligned one-to-one with `base.negatives`.
    pub synth_questions: Vec<(usize, Text)>,
    pub status: AugmentStatus,
}

impl AugmentedGroup {
    pub fn unaugmented(base: QuestionGroup) -> Self {
        AugmentedGroup {
            base,
            synth_answer: None,
            synth_questions: Vec::new(),
            status: AugmentStatus::Complete,
        }
    }

    pub fn failed(base: QuestionGroup) -> Self {
        AugmentedGroup {
            status: AugmentStatus::Failed,
            ..AugmentedGroup::unaugmented(base)
        }
    }

    pub fn is_failed(&self) -> bool {
        self.status == AugmentStatus::Failed
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedEntry {
    pub score: f64,
    pub label: Label,
    /// Position of the candidate in its original list.
    pub index: usize,
}

/// Candidates sorted by descending score, ties broken by original index.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn from_scores(query_id: impl Into<String>, scored: &[(f64, Label)]) -> Self {
        let mut entries: Vec<RankedEntry> = scored
            .iter()
            .enumerate()
            .map(|(index, &(score, label))| RankedEntry {
                score,
                label,
                index,
            })
            .collect();
        entries.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
        RankedList {
            query_id: query_id.into(),
            entries,
        }
    }

    pub fn entries(&self) -> &[RankedEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = Label> + '_ {
        self.entries.iter().map(|e| e.label)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair(qid: &str, q: &str, a: &str, rel: bool) -> QAPair {
        QAPair {
            question_id: qid.into(),
            question: Text::new(q),
            answer: Text::new(a),
            label: Label::binary(rel),
        }
    }

    #[test]
    fn tokenizes_table_question() {
        let t = tokenize("How many music awards has Katy Perry won?");
        assert_eq!(
            t.tokens(),
            ["how", "many", "music", "awards", "has", "katy", "perry", "won"]
        );
    }

    #[test]
    fn tokenize_edge_cases() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("  \t ").is_empty());
        assert_eq!(tokenize("A  B").tokens(), ["a", "b"]);
        assert_eq!(tokenize("(it's) [x]:y").tokens(), ["it", "s", "x", "y"]);
    }

    #[test]
    fn graded_binarization() {
        assert!(Label::graded(4, 3).unwrap().is_relevant());
        assert!(Label::graded(3, 3).unwrap().is_relevant());
        assert!(!Label::graded(2, 3).unwrap().is_relevant());
        assert!(Label::graded(5, 3).is_err());
        assert_eq!(Label::graded(2, 3).unwrap().grade(), Some(2));
    }

    #[test]
    fn groups_partition_by_label() {
        let pairs = vec![
            pair("q1", "q one", "a", true),
            pair("q1", "q one", "b", false),
            pair("q2", "q two", "c", false),
        ];
        let groups = group_pairs(&pairs).unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].question_id, "q1");
        assert_eq!(groups[0].positives, vec![Text::new("a")]);
        assert_eq!(groups[0].negatives, vec![Text::new("b")]);
        assert_eq!(groups[1].question_id, "q2");
        assert!(groups[1].positives.is_empty());
        assert_eq!(groups[1].negatives, vec![Text::new("c")]);
    }

    #[test]
    fn group_rejects_empty_and_conflicts() {
        assert!(matches!(group_pairs(&[]), Err(Error::Empty(_))));
        let pairs = vec![pair("q1", "first", "a", true), pair("q1", "second", "b", false)];
        assert!(matches!(group_pairs(&pairs), Err(Error::Data(_))));
    }

    #[test]
    fn ranked_list_ties_keep_original_order() {
        let l = Label::binary(false);
        let rl = RankedList::from_scores("q", &[(0.5, l), (1.0, l), (0.5, l), (1.0, l)]);
        let order: Vec<usize> = rl.entries().iter().map(|e| e.index).collect();
        assert_eq!(order, vec![1, 3, 0, 2]);
    }

    #[test]
    fn truncation_keeps_tokenization_consistent() {
        let t = Text::new("One, two; three four!");
        let cut = t.truncated(2);
        assert_eq!(cut.tokens(), ["one", "two"]);
        assert_eq!(tokenize(cut.raw()), cut);
        assert_eq!(t.truncated(10), t);
    }

    proptest! {
        #[test]
        fn tokenize_is_idempotent(raw in "[a-zA-Z .,!?;:'\"()\\[\\]\t]{0,40}") {
            let once = tokenize(&raw);
            let again = tokenize(&once.tokens().join(" "));
            prop_assert_eq!(once.tokens(), again.tokens());
        }

        #[test]
        fn ranked_list_order_invariant(scores in proptest::collection::vec(-3i32..3, 0..20)) {
            let scored: Vec<(f64, Label)> =
                scores.iter().map(|&s| (s as f64, Label::binary(s > 0))).collect();
            let rl = RankedList::from_scores("q", &scored);
            for w in rl.entries().windows(2) {
                prop_assert!(
                    w[0].score > w[1].score || (w[0].score == w[1].score && w[0].index < w[1].index)
                );
            }
        }

        #[test]
        fn group_sizes_match_pair_counts(labels in proptest::collection::vec((0usize..4, any::<bool>()), 1..40)) {
            let pairs: Vec<QAPair> = labels
                .iter()
                .enumerate()
                .map(|(i, &(q, rel))| pair(&format!("q{q}"), &format!("question {q}"), &format!("answer {i}"), rel))
                .collect();
            let groups = group_pairs(&pairs).unwrap();
            for g in &groups {
                let n = pairs.iter().filter(|p| p.question_id == g.question_id).count();
                prop_assert_eq!(g.positives.len() + g.negatives.len(), n);
                prop_assert_eq!(g.len(), n);
            }
        }
    }
}
