//! Bilateral generation: fine-tuning corpora for the question and answer
//! generators, and synthesis of pseudo-positive pairs from negatives.
//!
//! For a group with question q and negatives a⁻_j, synthesis produces one
//! answer a* = AG(q) and one question q*_j = QG(a⁻_j) per negative. The pairs
//! (q, a*) and (q*_j, a⁻_j) are later contrasted against (q, a⁻_j).

mod cache;
mod remote;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::text::{AugmentedGroup, QuestionGroup, Text};

pub use cache::{read_cache, read_cache_file, write_cache, write_cache_file, CACHE_HEADER};
pub use remote::{RemoteGenerator, RemoteGeneratorConfig};

/// Literal separator appended (after one space) to every generator source.
pub const SEP: &str = "[SEP]";
pub const QUESTION_MAX_TOKENS: usize = 30;
pub const ANSWER_MAX_TOKENS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GenMode {
    /// Answer in, question out (QG).
    Question,
    /// Question in, answer out (AG).
    Answer,
}

impl GenMode {
    pub fn default_max_tokens(self) -> usize {
        match self {
            GenMode::Question => QUESTION_MAX_TOKENS,
            GenMode::Answer => ANSWER_MAX_TOKENS,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GenMode::Question => "question",
            GenMode::Answer => "answer",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenRequest {
    pub mode: GenMode,
    pub source: Text,
    pub max_tokens: usize,
}

impl GenRequest {
    pub fn new(mode: GenMode, source: Text) -> Self {
        GenRequest {
            mode,
            max_tokens: mode.default_max_tokens(),
            source,
        }
    }
}

/// A text generator. Implementations return non-empty text; callers
/// truncate to `max_tokens` regardless.
pub trait Generator: Send + Sync {
    fn generate(&self, request: &GenRequest) -> Result<Text>;
}

impl<G: Generator + ?Sized> Generator for &G {
    fn generate(&self, request: &GenRequest) -> Result<Text> {
        (**self).generate(request)
    }
}

impl<G: Generator + ?Sized> Generator for Box<G> {
    fn generate(&self, request: &GenRequest) -> Result<Text> {
        (**self).generate(request)
    }
}

/// One fine-tuning example: `source` ends with `" [SEP]"`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenCorpusRecord {
    pub source: String,
    pub target: String,
}

impl GenCorpusRecord {
    fn new(source: &Text, target: &Text) -> Self {
        GenCorpusRecord {
            source: format!("{} {SEP}", source.raw()),
            target: target.raw().to_owned(),
        }
    }
}

/// Answer → question records, one per positive pair.
pub fn build_qg_corpus(groups: &[QuestionGroup]) -> Vec<GenCorpusRecord> {
    groups
        .iter()
        .flat_map(|g| g.positives.iter().map(|a| GenCorpusRecord::new(a, &g.question)))
        .collect()
}

/// Question → answer records, one per positive pair.
pub fn build_ag_corpus(groups: &[QuestionGroup]) -> Vec<GenCorpusRecord> {
    groups
        .iter()
        .flat_map(|g| g.positives.iter().map(|a| GenCorpusRecord::new(&g.question, a)))
        .collect()
}

/// Two-column TAB export. Tabs and newlines inside texts become spaces.
pub fn export_corpus(records: &[GenCorpusRecord]) -> String {
    let clean = |s: &str| s.replace(['\t', '\n', '\r'], " ");
    records
        .iter()
        .map(|r| format!("{}\t{}\n", clean(&r.source), clean(&r.target)))
        .collect()
}

fn generate_capped(gen: &dyn Generator, mode: GenMode, source: &Text) -> Result<Text> {
    let req = GenRequest::new(mode, source.clone());
    let out = gen.generate(&req)?.truncated(req.max_tokens);
    if out.is_empty() {
        return Err(Error::Generation(format!(
            "{} generator returned empty text",
            mode.as_str()
        )));
    }
    Ok(out)
}

/// Runs AG on the question and QG on every negative. Any generator error
/// marks the group failed; failed groups keep only their original pairs.
pub fn synthesize(
    group: &QuestionGroup,
    gen: &dyn Generator,
    enable_qg: bool,
    enable_ag: bool,
) -> Result<AugmentedGroup> {
    if group.negatives.is_empty() && (enable_qg || enable_ag) {
        return Err(Error::Data(format!(
            "question {} has no negatives to contrast with",
            group.question_id
        )));
    }
    let attempt = || -> Result<AugmentedGroup> {
        let synth_answer = if enable_ag {
            Some(generate_capped(gen, GenMode::Answer, &group.question)?)
        } else {
            None
        };
        let synth_questions = if enable_qg {
            group
                .negatives
                .iter()
                .enumerate()
                .map(|(j, a)| Ok((j, generate_capped(gen, GenMode::Question, a)?)))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        Ok(AugmentedGroup {
            synth_answer,
            synth_questions,
            ..AugmentedGroup::unaugmented(group.clone())
        })
    };
    match attempt() {
        Ok(aug) => Ok(aug),
        Err(e) => {
            log::warn!("augmentation failed for question {}: {e}", group.question_id);
            Ok(AugmentedGroup::failed(group.clone()))
        }
    }
}

/// Synthesizes every group with at most `jobs` generator calls in flight.
/// Groups without negatives pass through unaugmented. Output order matches
/// input order.
pub fn synthesize_all(
    groups: &[QuestionGroup],
    gen: &dyn Generator,
    enable_qg: bool,
    enable_ag: bool,
    jobs: usize,
) -> Vec<AugmentedGroup> {
    let run = |g: &QuestionGroup| {
        if g.negatives.is_empty() {
            AugmentedGroup::unaugmented(g.clone())
        } else {
            synthesize(g, gen, enable_qg, enable_ag).expect("negatives checked")
        }
    };
    let jobs = jobs.max(1).min(groups.len().max(1));
    if jobs == 1 {
        return groups.iter().map(run).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<AugmentedGroup>>> = Mutex::new(vec![None; groups.len()]);
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= groups.len() {
                    break;
                }
                let out = run(&groups[i]);
                slots.lock().expect("no worker panicked")[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|g| g.expect("every slot filled"))
        .collect()
}

const STOPWORDS: &[&str] = &[
    "a", "about", "an", "and", "are", "as", "at", "be", "by", "did", "do", "does", "for", "from",
    "had", "has", "have", "how", "in", "is", "it", "its", "of", "on", "or", "that", "the", "this",
    "to", "was", "were", "what", "when", "where", "which", "who", "why", "with",
];

/// Deterministic offline generator.
///
/// Question mode: `"what about {first 27 non-stopword source tokens}?"`.
/// Answer mode: `"{first 48 source tokens} ."`.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubGenerator;

impl Generator for StubGenerator {
    fn generate(&self, request: &GenRequest) -> Result<Text> {
        let tokens = request.source.tokens();
        let raw = match request.mode {
            GenMode::Question => {
                let content: Vec<&str> = tokens
                    .iter()
                    .map(String::as_str)
                    .filter(|t| !STOPWORDS.contains(t))
                    .take(27)
                    .collect();
                if content.is_empty() {
                    "what about?".to_owned()
                } else {
                    format!("what about {}?", content.join(" "))
                }
            }
            GenMode::Answer => {
                if tokens.is_empty() {
                    return Err(Error::Generation("empty source".into()));
                }
                format!("{} .", tokens[..tokens.len().min(48)].join(" "))
            }
        };
        Ok(Text::new(raw).truncated(request.max_tokens))
    }
}

/// Generator for topic-token synthetic data: emits a counterpart carrying
/// the source's topic token plus filler drawn deterministically from the
/// source text.
#[derive(Debug, Clone)]
pub struct OracleGenerator {
    pub topic_prefix: String,
    pub filler_prefix: String,
    pub filler_vocab: usize,
    pub question_len: usize,
    pub answer_len: usize,
}

impl Default for OracleGenerator {
    fn default() -> Self {
        OracleGenerator {
            topic_prefix: crate::synthetic::TOPIC_PREFIX.to_owned(),
            filler_prefix: crate::synthetic::NOISE_PREFIX.to_owned(),
            filler_vocab: crate::synthetic::SyntheticConfig::default().noise_vocab,
            question_len: 4,
            answer_len: 6,
        }
    }
}

/// 64-bit FNV-1a; stable across platforms and toolchains.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl OracleGenerator {
    pub fn topic_of<'a>(&self, text: &'a Text) -> Option<&'a str> {
        text.tokens()
            .iter()
            .map(String::as_str)
            .find(|t| t.starts_with(&self.topic_prefix))
    }
}

impl Generator for OracleGenerator {
    fn generate(&self, request: &GenRequest) -> Result<Text> {
        let topic = self.topic_of(&request.source).ok_or_else(|| {
            Error::Generation(format!(
                "source {:?} carries no {}* token",
                request.source.raw(),
                self.topic_prefix
            ))
        })?;
        let seed = fnv1a(format!("{}\u{1f}{}", request.mode.as_str(), request.source.raw()).as_bytes());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = match request.mode {
            GenMode::Question => self.question_len,
            GenMode::Answer => self.answer_len,
        };
        let mut tokens = vec![topic.to_owned()];
        tokens.extend(
            (0..n).map(|_| format!("{}{}", self.filler_prefix, rng.gen_range(0..self.filler_vocab.max(1)))),
        );
        Ok(Text::from_tokens(&tokens).truncated(request.max_tokens))
    }
}
