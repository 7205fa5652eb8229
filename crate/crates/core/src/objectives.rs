//! Loss functions over relevance scores, each returning its value and the
//! derivative with respect to every score that contributed.
//!
//! The trainer chains these derivatives through [`crate::scorer::Scorer`].

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub const DEFAULT_MARGIN: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossMode {
    Pointwise,
    Pairwise,
    Contrastive,
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pointwise" => Ok(LossMode::Pointwise),
            "pairwise" => Ok(LossMode::Pairwise),
            "contrastive" => Ok(LossMode::Contrastive),
            other => Err(Error::Config(format!("unknown loss mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossMode::Pointwise => "pointwise",
            LossMode::Pairwise => "pairwise",
            LossMode::Contrastive => "contrastive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub margin: f64,
    pub mode: LossMode,
    /// Score synthesized pairs as label-1 pointwise examples instead of
    /// contrasting them with the original negatives.
    pub treat_synth_as_positive: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            margin: DEFAULT_MARGIN,
            mode: LossMode::Contrastive,
            treat_synth_as_positive: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!(
                "margin must be finite and non-negative, got {}",
                self.margin
            )));
        }
        Ok(())
    }
}

/// Identifies which score a derivative belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ScoreSlot {
    /// i-th entry of a flat score list (pointwise losses).
    Item(usize),
    /// R(q, a⁺_i)
    Positive(usize),
    /// R(q, a⁻_j)
    Negative(usize),
    /// R(q, a*)
    SynthAnswer,
    /// R(q*_j, a⁻_j)
    SynthQuestion(usize),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossValue {
    pub value: f64,
    pub dloss_dscore: BTreeMap<ScoreSlot, f64>,
}

impl LossValue {
    fn add_grad(&mut self, slot: ScoreSlot, g: f64) {
        *self.dloss_dscore.entry(slot).or_insert(0.0) += g;
    }

    /// ∂loss/∂score for `slot`; zero when the slot did not contribute.
    pub fn grad(&self, slot: ScoreSlot) -> f64 {
        self.dloss_dscore.get(&slot).copied().unwrap_or(0.0)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of `σ(score)` against `y`, in the stable form
/// `softplus(score) − y·score`. Gradient `σ(score) − y`.
pub fn pointwise_loss(score: f64, relevant: bool) -> LossValue {
    let y = if relevant { 1.0 } else { 0.0 };
    let mut out = LossValue {
        value: softplus(score) - y * score,
        ..Default::default()
    };
    out.add_grad(ScoreSlot::Item(0), sigmoid(score) - y);
    out
}

/// Mean pointwise loss over `(score, relevant)` items.
pub fn pointwise_set_loss(items: &[(f64, bool)]) -> Result<LossValue> {
    if items.is_empty() {
        return Err(Error::Empty("pointwise loss needs at least one pair"));
    }
    let w = 1.0 / items.len() as f64;
    let mut out = LossValue::default();
    for (i, &(s, y)) in items.iter().enumerate() {
        let l = pointwise_loss(s, y);
        out.value += w * l.value;
        out.add_grad(ScoreSlot::Item(i), w * l.grad(ScoreSlot::Item(0)));
    }
    Ok(out)
}

/// `max(0, M − s⁺ + s⁻)`. Derivatives are (−1, +1) when active and zero
/// at or beyond the margin.
pub fn hinge(score_pos: f64, score_neg: f64, margin: f64) -> LossValue {
    let raw = margin - score_pos + score_neg;
    let mut out = LossValue::default();
    if raw > 0.0 {
        out.value = raw;
        out.add_grad(ScoreSlot::Positive(0), -1.0);
        out.add_grad(ScoreSlot::Negative(0), 1.0);
    }
    out
}

/// Mean hinge over every (positive, negative) combination, outer loop over
/// positives. An empty positive list contributes zero.
pub fn set_pairwise_loss(scores_pos: &[f64], scores_neg: &[f64], margin: f64) -> Result<LossValue> {
    if scores_neg.is_empty() {
        return Err(Error::Empty("set pairwise loss needs at least one negative"));
    }
    let mut out = LossValue::default();
    if scores_pos.is_empty() {
        return Ok(out);
    }
    let w = 1.0 / (scores_pos.len() * scores_neg.len()) as f64;
    let mut sum = 0.0;
    for (i, &sp) in scores_pos.iter().enumerate() {
        for (j, &sn) in scores_neg.iter().enumerate() {
            let h = hinge(sp, sn, margin);
            sum += h.value;
            if h.value > 0.0 {
                out.add_grad(ScoreSlot::Positive(i), -w);
                out.add_grad(ScoreSlot::Negative(j), w);
            }
        }
    }
    out.value = sum / (scores_pos.len() * scores_neg.len()) as f64;
    Ok(out)
}

/// Scores of one question group and its synthesized pairs.
#[derive(Debug, Clone, Copy, Default)]
pub struct GroupScores<'a> {
    /// R(q, a⁺) for every positive.
    pub pos: &'a [f64],
    /// R(q, a⁻) for every negative.
    pub neg: &'a [f64],
    /// R(q, a*), if an answer was synthesized.
    pub synth_answer: Option<f64>,
    /// R(q*_j, a⁻_j), aligned with `neg`; empty when no questions were synthesized.
    pub synth_questions: &'a [Option<f64>],
}

/// Set pairwise loss plus, averaged over negatives, a hinge pushing
/// R(q, a*) above R(q, a⁻_j) and a hinge pushing R(q*_j, a⁻_j) above
/// R(q, a⁻_j).
pub fn contrastive_loss(scores: &GroupScores<'_>, margin: f64) -> Result<LossValue> {
    let neg = scores.neg;
    if neg.is_empty() {
        return Err(Error::Empty("contrastive loss needs at least one negative"));
    }
    if !scores.synth_questions.is_empty() && scores.synth_questions.len() != neg.len() {
        return Err(Error::Data(format!(
            "{} synthesized questions for {} negatives",
            scores.synth_questions.len(),
            neg.len()
        )));
    }
    let mut out = set_pairwise_loss(scores.pos, neg, margin)?;
    let w = 1.0 / neg.len() as f64;
    let mut extra = 0.0;
    for (j, &sn) in neg.iter().enumerate() {
        if let Some(sa) = scores.synth_answer {
            let h = hinge(sa, sn, margin);
            extra += h.value;
            if h.value > 0.0 {
                out.add_grad(ScoreSlot::SynthAnswer, -w);
                out.add_grad(ScoreSlot::Negative(j), w);
            }
        }
        if let Some(Some(sq)) = scores.synth_questions.get(j) {
            let h = hinge(*sq, sn, margin);
            extra += h.value;
            if h.value > 0.0 {
                out.add_grad(ScoreSlot::SynthQuestion(j), -w);
                out.add_grad(ScoreSlot::Negative(j), w);
            }
        }
    }
    out.value += extra * w;
    Ok(out)
}
