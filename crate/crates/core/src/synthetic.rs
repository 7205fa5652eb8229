//! Synthetic answer-selection benchmark with a latent topic per text.
//!
//! Every question carries one `topicN` token plus noise tokens. Its relevant
//! answers share the topic; irrelevant answers are drawn from other topics.
//! About 40% of questions have any relevant answer, with 1–5 each, which puts
//! the positive rate near 12% for ten candidates.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::text::{Label, QAPair, Text};

pub const TOPIC_PREFIX: &str = "topic";
pub const NOISE_PREFIX: &str = "n";

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub candidates: usize,
    /// Target fraction of relevant pairs.
    pub positive_rate: f64,
    /// Largest number of relevant answers a question may have.
    pub max_positives: usize,
    pub n_topics: usize,
    pub question_noise: usize,
    pub answer_noise: usize,
    pub noise_vocab: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_train: 200,
            n_test: 50,
            candidates: 10,
            positive_rate: 0.12,
            max_positives: 5,
            n_topics: 40,
            question_noise: 4,
            answer_noise: 6,
            noise_vocab: 200,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBenchmark {
    pub train: Vec<QAPair>,
    pub test: Vec<QAPair>,
}

struct Sampler<'a> {
    cfg: &'a SyntheticConfig,
    rng: ChaCha8Rng,
}

impl Sampler<'_> {
    fn text(&mut self, topic: usize, noise: usize) -> Text {
        let mut tokens = vec![format!("{TOPIC_PREFIX}{topic}")];
        for _ in 0..noise {
            tokens.push(format!("{NOISE_PREFIX}{}", self.rng.gen_range(0..self.cfg.noise_vocab)));
        }
        tokens.shuffle(&mut self.rng);
        Text::from_tokens(&tokens)
    }

    fn other_topic(&mut self, topic: usize) -> usize {
        let t = self.rng.gen_range(0..self.cfg.n_topics - 1);
        if t >= topic {
            t + 1
        } else {
            t
        }
    }

    fn question(&mut self, prefix: &str, qi: usize) -> Vec<QAPair> {
        let cfg = self.cfg;
        let topic = self.rng.gen_range(0..cfg.n_topics);
        let question = self.text(topic, cfg.question_noise);
        let mean_positives = (1 + cfg.max_positives) as f64 / 2.0;
        let p_has = (cfg.positive_rate * cfg.candidates as f64 / mean_positives).min(1.0);
        let n_pos = if self.rng.gen_bool(p_has) {
            self.rng.gen_range(1..=cfg.max_positives.min(cfg.candidates))
        } else {
            0
        };
        let mut labels: Vec<bool> = (0..cfg.candidates).map(|i| i < n_pos).collect();
        labels.shuffle(&mut self.rng);
        let qid = format!("{prefix}{qi:04}");
        labels
            .into_iter()
            .map(|rel| {
                let t = if rel { topic } else { self.other_topic(topic) };
                QAPair {
                    question_id: qid.clone(),
                    question: question.clone(),
                    answer: self.text(t, cfg.answer_noise),
                    label: Label::binary(rel),
                }
            })
            .collect()
    }
}

/// Generates train and test splits. Deterministic in `cfg`.
pub fn generate(cfg: &SyntheticConfig) -> SyntheticBenchmark {
    assert!(cfg.n_topics >= 2, "need at least two topics");
    assert!(cfg.noise_vocab >= 1 && cfg.candidates >= 1);
    let mut s = Sampler {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
    };
    let train = (0..cfg.n_train).flat_map(|i| s.question("train", i)).collect();
    let test = (0..cfg.n_test).flat_map(|i| s.question("test", i)).collect();
    SyntheticBenchmark { train, test }
}
