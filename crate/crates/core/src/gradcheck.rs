//! Finite-difference verification of every loss composed with the scorer.
//!
//! Each trial draws a small random model and a random question group, then
//! compares every analytic partial of `loss(scores(θ))` against the central
//! difference `(L(θ+h) − L(θ−h)) / 2h`. Draws that put a ReLU input, an
//! `|u−v|` component or a hinge argument within [`KINK_MARGIN`] of its kink
//! are redrawn, since the finite difference is meaningless across a kink.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::objectives::{
    contrastive_loss, hinge, pointwise_loss, set_pairwise_loss, GroupScores, LossValue, ScoreSlot,
};
use crate::scorer::{embed_mean, Gradients, Model, ModelParams, Scorer, Vocab};
use crate::text::Text;

pub const STEP: f64 = 1e-5;
pub const REL_TOLERANCE: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-8;
pub const KINK_MARGIN: f64 = 1e-4;
const MAX_REDRAWS: usize = 10_000;

const VOCAB_SIZE: usize = 10;
const EMBED_DIM: usize = 4;
const HIDDEN_DIM: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Score,
    Pointwise,
    Hinge,
    SetPairwise,
    Contrastive,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Score,
        Suite::Pointwise,
        Suite::Hinge,
        Suite::SetPairwise,
        Suite::Contrastive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Score => "score",
            Suite::Pointwise => "pointwise",
            Suite::Hinge => "hinge",
            Suite::SetPairwise => "set_pairwise",
            Suite::Contrastive => "contrastive",
        }
    }
}

/// The loss implementations under test. Swapping one out lets tests confirm
/// the harness catches a broken gradient.
#[derive(Clone, Copy)]
pub struct Kernels {
    pub pointwise: fn(f64, bool) -> LossValue,
    pub hinge: fn(f64, f64, f64) -> LossValue,
    pub set_pairwise: fn(&[f64], &[f64], f64) -> Result<LossValue>,
    pub contrastive: fn(&GroupScores<'_>, f64) -> Result<LossValue>,
}

impl Default for Kernels {
    fn default() -> Self {
        Kernels {
            pointwise: pointwise_loss,
            hinge,
            set_pairwise: set_pairwise_loss,
            contrastive: contrastive_loss,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub suite: &'static str,
    pub trial: usize,
    pub parameter: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: &'static str,
    pub trials: usize,
    pub partials_checked: usize,
    pub redraws: usize,
    pub max_rel_error: f64,
    /// Largest `|analytic − numeric|`, before the absolute floor applies.
    pub max_abs_diff: f64,
    pub violations: usize,
    pub worst: Option<Violation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub suites: Vec<SuiteReport>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.violations == 0)
    }

    /// Largest violation across suites.
    pub fn worst(&self) -> Option<&Violation> {
        self.suites
            .iter()
            .filter_map(|s| s.worst.as_ref())
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn failing_suites(&self) -> Vec<&'static str> {
        self.suites
            .iter()
            .filter(|s| s.violations > 0)
            .map(|s| s.suite)
            .collect()
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<14} {:>6} {:>9} {:>8} {:>12} {:>12} {:>10}\n",
            "suite", "trials", "partials", "redraws", "max abs diff", "max rel err", "violations"
        );
        for s in &self.suites {
            out.push_str(&format!(
                "{:<14} {:>6} {:>9} {:>8} {:>12.3e} {:>12.3e} {:>10}\n",
                s.suite,
                s.trials,
                s.partials_checked,
                s.redraws,
                s.max_abs_diff,
                s.max_rel_error,
                s.violations
            ));
        }
        out
    }
}

/// One random group: original pairs plus optional synthesized pairs.
struct Draw {
    model: Model,
    question: Text,
    positives: Vec<Text>,
    negatives: Vec<Text>,
    synth_answer: Option<Text>,
    synth_questions: Vec<Option<Text>>,
    label: bool,
    margin: f64,
}

fn random_text(rng: &mut ChaCha8Rng) -> Text {
    let n = rng.gen_range(1..=4);
    // index VOCAB_SIZE is out of vocabulary and maps to UNK
    let tokens: Vec<String> = (0..n)
        .map(|_| format!("t{}", rng.gen_range(1..=VOCAB_SIZE)))
        .collect();
    Text::from_tokens(&tokens)
}

fn random_draw(rng: &mut ChaCha8Rng) -> Draw {
    let tokens: Vec<String> = std::iter::once(crate::scorer::UNK_TOKEN.to_owned())
        .chain((1..VOCAB_SIZE).map(|i| format!("t{i}")))
        .collect();
    let vocab = Vocab::from_tokens(tokens).expect("valid vocabulary");
    let mut params = ModelParams::zeros(vocab.len(), EMBED_DIM, HIDDEN_DIM);
    for i in 0..params.len() {
        params.set_flat(i, rng.gen_range(-1.0..1.0));
    }
    let model = Model::new(vocab, params).expect("consistent shapes");
    let n_pos = rng.gen_range(0..=3);
    let n_neg = rng.gen_range(1..=4);
    let negatives: Vec<Text> = (0..n_neg).map(|_| random_text(rng)).collect();
    let synth_questions = if rng.gen_bool(0.7) {
        (0..n_neg)
            .map(|_| rng.gen_bool(0.8).then(|| random_text(rng)))
            .collect()
    } else {
        Vec::new()
    };
    Draw {
        question: random_text(rng),
        positives: (0..n_pos).map(|_| random_text(rng)).collect(),
        negatives,
        synth_answer: rng.gen_bool(0.7).then(|| random_text(rng)),
        synth_questions,
        label: rng.gen_bool(0.5),
        margin: rng.gen_range(0.0..2.0),
        model,
    }
}

impl Draw {
    /// Pairs scored by `suite`, in slot order.
    fn pairs(&self, suite: Suite) -> Vec<(&Text, &Text)> {
        let q = &self.question;
        let first_neg = &self.negatives[0];
        match suite {
            Suite::Score | Suite::Pointwise => vec![(q, first_neg)],
            Suite::Hinge => vec![(q, self.positives.first().unwrap_or(first_neg)), (q, first_neg)],
            Suite::SetPairwise | Suite::Contrastive => {
                let mut pairs: Vec<(&Text, &Text)> =
                    self.positives.iter().chain(&self.negatives).map(|a| (q, a)).collect();
                if suite == Suite::Contrastive {
                    if let Some(a) = &self.synth_answer {
                        pairs.push((q, a));
                    }
                    for (sq, a) in self.synth_questions.iter().zip(&self.negatives) {
                        if let Some(sq) = sq {
                            pairs.push((sq, a));
                        }
                    }
                }
                pairs
            }
        }
    }

    /// Loss over already computed scores, with ∂loss/∂score per pair index.
    fn loss(&self, suite: Suite, k: &Kernels, scores: &[f64]) -> Result<(f64, Vec<f64>)> {
        let n_pos = self.positives.len();
        let n_neg = self.negatives.len();
        let mut dscore = vec![0.0; scores.len()];
        let value = match suite {
            Suite::Score => {
                dscore[0] = 1.0;
                scores[0]
            }
            Suite::Pointwise => {
                let l = (k.pointwise)(scores[0], self.label);
                dscore[0] = l.grad(ScoreSlot::Item(0));
                l.value
            }
            Suite::Hinge => {
                let l = (k.hinge)(scores[0], scores[1], self.margin);
                dscore[0] = l.grad(ScoreSlot::Positive(0));
                dscore[1] = l.grad(ScoreSlot::Negative(0));
                l.value
            }
            Suite::SetPairwise | Suite::Contrastive => {
                let mut synth_q_idx = Vec::new();
                let l = if suite == Suite::SetPairwise {
                    (k.set_pairwise)(&scores[..n_pos], &scores[n_pos..n_pos + n_neg], self.margin)?
                } else {
                    let mut next = n_pos + n_neg + self.synth_answer.is_some() as usize;
                    for sq in &self.synth_questions {
                        synth_q_idx.push(sq.as_ref().map(|_| {
                            next += 1;
                            next - 1
                        }));
                    }
                    let sq_scores: Vec<Option<f64>> =
                        synth_q_idx.iter().map(|i| i.map(|i| scores[i])).collect();
                    (k.contrastive)(
                        &GroupScores {
                            pos: &scores[..n_pos],
                            neg: &scores[n_pos..n_pos + n_neg],
                            synth_answer: self.synth_answer.as_ref().map(|_| scores[n_pos + n_neg]),
                            synth_questions: &sq_scores,
                        },
                        self.margin,
                    )?
                };
                for (&slot, &g) in &l.dloss_dscore {
                    let idx = match slot {
                        ScoreSlot::Positive(i) => i,
                        ScoreSlot::Negative(j) => n_pos + j,
                        ScoreSlot::SynthAnswer => n_pos + n_neg,
                        ScoreSlot::SynthQuestion(j) => synth_q_idx[j].ok_or_else(|| {
                            Error::Data(format!("gradient for absent synthesized question {j}"))
                        })?,
                        ScoreSlot::Item(_) => {
                            return Err(Error::Data("unexpected pointwise slot".into()))
                        }
                    };
                    dscore[idx] += g;
                }
                l.value
            }
        };
        Ok((value, dscore))
    }

    /// Hinge arguments `M − s⁺ + s⁻` used by `suite`.
    fn hinge_arguments(&self, suite: Suite, scores: &[f64]) -> Vec<f64> {
        let m = self.margin;
        let n_pos = self.positives.len();
        let n_neg = self.negatives.len();
        match suite {
            Suite::Score | Suite::Pointwise => Vec::new(),
            Suite::Hinge => vec![m - scores[0] + scores[1]],
            Suite::SetPairwise | Suite::Contrastive => {
                let neg = &scores[n_pos..n_pos + n_neg];
                let mut args: Vec<f64> = scores[..n_pos]
                    .iter()
                    .flat_map(|p| neg.iter().map(move |n| m - p + n))
                    .collect();
                if suite == Suite::Contrastive {
                    let mut next = n_pos + n_neg;
                    if self.synth_answer.is_some() {
                        args.extend(neg.iter().map(|n| m - scores[next] + n));
                        next += 1;
                    }
                    for (sq, n) in self.synth_questions.iter().zip(neg) {
                        if sq.is_some() {
                            args.push(m - scores[next] + n);
                            next += 1;
                        }
                    }
                }
                args
            }
        }
    }

    fn near_kink(&self, suite: Suite, scores: &[f64]) -> Result<bool> {
        for (q, a) in self.pairs(suite) {
            let pre = pre_activations(&self.model, q, a)?;
            if pre.iter().any(|z| z.abs() < KINK_MARGIN) {
                return Ok(true);
            }
            let u = embed_mean(q, &self.model.params, &self.model.vocab)?;
            let v = embed_mean(a, &self.model.params, &self.model.vocab)?;
            // identical pooled vectors stay identical under perturbation only
            // when q and a are the same bag of tokens
            if u.iter().zip(&v).any(|(x, y)| (x - y).abs() < KINK_MARGIN) {
                return Ok(true);
            }
        }
        Ok(self
            .hinge_arguments(suite, scores)
            .iter()
            .any(|x| x.abs() < KINK_MARGIN))
    }
}

fn pre_activations(model: &Model, q: &Text, a: &Text) -> Result<Vec<f64>> {
    let p = &model.params;
    let u = embed_mean(q, p, &model.vocab)?;
    let v = embed_mean(a, p, &model.vocab)?;
    let fused: Vec<f64> = u
        .iter()
        .chain(&v)
        .copied()
        .chain(u.iter().zip(&v).map(|(x, y)| x * y))
        .chain(u.iter().zip(&v).map(|(x, y)| (x - y).abs()))
        .collect();
    Ok(p.w1
        .chunks_exact(fused.len())
        .zip(&p.b1)
        .map(|(row, b)| row.iter().zip(&fused).map(|(w, f)| w * f).sum::<f64>() + b)
        .collect())
}

fn composite(draw: &Draw, model: &Model, suite: Suite, k: &Kernels) -> Result<f64> {
    let scores: Vec<f64> = draw
        .pairs(suite)
        .iter()
        .map(|(q, a)| model.score(q, a))
        .collect::<Result<_>>()?;
    Ok(draw.loss(suite, k, &scores)?.0)
}

fn analytic(draw: &Draw, suite: Suite, k: &Kernels) -> Result<(Vec<f64>, Gradients)> {
    let mut scores = Vec::new();
    let mut grads = Vec::new();
    for (q, a) in draw.pairs(suite) {
        let (s, g) = draw.model.score_with_grad(q, a)?;
        scores.push(s);
        grads.push(g);
    }
    let (_, dscore) = draw.loss(suite, k, &scores)?;
    let mut total = Gradients::zeros_like(&draw.model.params);
    for (g, d) in grads.iter().zip(&dscore) {
        total.add_scaled(*d, g);
    }
    Ok((scores, total))
}

/// Relative error with an absolute floor: differences below [`ABS_FLOOR`]
/// count as zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= ABS_FLOOR {
        0.0
    } else {
        diff / analytic.abs().max(numeric.abs())
    }
}

fn run_suite(suite: Suite, trials: usize, rng: &mut ChaCha8Rng, k: &Kernels) -> Result<SuiteReport> {
    let mut report = SuiteReport {
        suite: suite.name(),
        trials,
        partials_checked: 0,
        redraws: 0,
        max_rel_error: 0.0,
        max_abs_diff: 0.0,
        violations: 0,
        worst: None,
    };
    for trial in 0..trials {
        let mut attempts = 0;
        let (draw, grad) = loop {
            let draw = random_draw(rng);
            let (scores, grad) = analytic(&draw, suite, k)?;
            if !draw.near_kink(suite, &scores)? {
                break (draw, grad);
            }
            attempts += 1;
            report.redraws += 1;
            if attempts >= MAX_REDRAWS {
                return Err(Error::Config(format!(
                    "{}: could not draw a configuration away from kinks",
                    suite.name()
                )));
            }
        };
        let mut model = draw.model.clone();
        for i in 0..model.params.len() {
            let x = model.params.get_flat(i);
            model.params.set_flat(i, x + STEP);
            let up = composite(&draw, &model, suite, k)?;
            model.params.set_flat(i, x - STEP);
            let down = composite(&draw, &model, suite, k)?;
            model.params.set_flat(i, x);
            let numeric = (up - down) / (2.0 * STEP);
            let a = grad.get_flat(&draw.model.params, i);
            let rel = relative_error(a, numeric);
            report.partials_checked += 1;
            report.max_rel_error = report.max_rel_error.max(rel);
            report.max_abs_diff = report.max_abs_diff.max((a - numeric).abs());
            if rel >= REL_TOLERANCE {
                report.violations += 1;
                if report.worst.as_ref().is_none_or(|w| rel > w.rel_error) {
                    report.worst = Some(Violation {
                        suite: suite.name(),
                        trial,
                        parameter: i,
                        analytic: a,
                        numeric,
                        rel_error: rel,
                    });
                }
            }
        }
    }
    Ok(report)
}

/// Runs every suite with `trials` random configurations each.
pub fn run(trials: usize, seed: u64) -> Result<GradcheckReport> {
    run_with(trials, seed, &Kernels::default())
}

pub fn run_with(trials: usize, seed: u64, kernels: &Kernels) -> Result<GradcheckReport> {
    if trials == 0 {
        return Err(Error::Config("trials must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let suites = Suite::ALL
        .iter()
        .map(|&s| run_suite(s, trials, &mut rng, kernels))
        .collect::<Result<Vec<_>>>()?;
    Ok(GradcheckReport { suites })
}
