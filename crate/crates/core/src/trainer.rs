//! Per-group SGD over the pointwise, pairwise and contrastive objectives.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::metrics::{evaluate_run, EvalOptions, MetricReport, DEFAULT_KS};
use crate::objectives::{
    contrastive_loss, pointwise_set_loss, set_pairwise_loss, GroupScores, LossConfig, LossMode,
    ScoreSlot, DEFAULT_MARGIN,
};
use crate::scorer::{
    Model, Scorer, Vocab, DEFAULT_EMBED_DIM, DEFAULT_HIDDEN_DIM, DEFAULT_INIT_SEED,
};
use crate::text::{AugmentedGroup, QuestionGroup, Text};

pub const DEFAULT_EPOCHS: usize = 5;
pub const DEFAULT_LEARNING_RATE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Ablation {
    pub disable_qg: bool,
    pub disable_ag: bool,
    pub treat_synth_as_positive: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: LossMode,
    pub epochs: usize,
    pub learning_rate: f64,
    pub margin: f64,
    pub seed: u64,
    pub ablation: Ablation,
    pub eval_ks: Vec<usize>,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub min_freq: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: LossMode::Pairwise,
            epochs: DEFAULT_EPOCHS,
            learning_rate: DEFAULT_LEARNING_RATE,
            margin: DEFAULT_MARGIN,
            seed: DEFAULT_INIT_SEED,
            ablation: Ablation::default(),
            eval_ks: DEFAULT_KS.to_vec(),
            embed_dim: DEFAULT_EMBED_DIM,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            min_freq: 1,
        }
    }
}

impl TrainConfig {
    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            margin: self.margin,
            mode: self.mode,
            treat_synth_as_positive: self.ablation.treat_synth_as_positive,
        }
    }

    /// True when this configuration reads synthesized pairs.
    pub fn uses_augmentation(&self) -> bool {
        let a = &self.ablation;
        match self.mode {
            LossMode::Pairwise => false,
            LossMode::Pointwise => a.treat_synth_as_positive,
            LossMode::Contrastive => {
                a.treat_synth_as_positive || !(a.disable_qg && a.disable_ag)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss_config().validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.ablation.treat_synth_as_positive && self.mode == LossMode::Pairwise {
            return Err(Error::Config(
                "synthesized positives are pointwise examples; use pointwise or contrastive mode"
                    .into(),
            ));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("model dimensions must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_train_loss: f64,
    /// Groups that produced a loss term this epoch.
    pub groups_used: usize,
    pub dev: Option<MetricReport>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn to_json_lines(&self) -> String {
        self.epochs
            .iter()
            .map(|e| {
                let dev = e.dev.as_ref().map_or(Value::Null, MetricReport::aggregate_json);
                let line = json!({
                    "epoch": e.epoch,
                    "mean_train_loss": e.mean_train_loss,
                    "groups_used": e.groups_used,
                    "dev": dev,
                });
                format!("{line}\n")
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PlanKind {
    Pointwise,
    Pairwise { n_pos: usize, n_neg: usize },
    Contrastive { n_pos: usize, n_neg: usize, has_answer: bool },
}

/// Everything needed to compute one group's loss: the pairs to score and
/// how their scores feed the objective.
#[derive(Debug, Clone)]
pub struct GroupPlan<'a> {
    pairs: Vec<(&'a Text, &'a Text)>,
    labels: Vec<bool>,
    /// For contrastive plans: pair index of q*_j for each negative, if any.
    synth_q_pairs: Vec<Option<usize>>,
    kind: PlanKind,
}

impl GroupPlan<'_> {
    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    fn pair_of(&self, slot: ScoreSlot) -> usize {
        match (self.kind, slot) {
            (PlanKind::Pointwise, ScoreSlot::Item(i)) => i,
            (PlanKind::Pairwise { .. } | PlanKind::Contrastive { .. }, ScoreSlot::Positive(i)) => i,
            (
                PlanKind::Pairwise { n_pos, .. } | PlanKind::Contrastive { n_pos, .. },
                ScoreSlot::Negative(j),
            ) => n_pos + j,
            (PlanKind::Contrastive { n_pos, n_neg, .. }, ScoreSlot::SynthAnswer) => n_pos + n_neg,
            (PlanKind::Contrastive { .. }, ScoreSlot::SynthQuestion(j)) => {
                self.synth_q_pairs[j].expect("gradient only for present q*")
            }
            (kind, slot) => unreachable!("slot {slot:?} in {kind:?} plan"),
        }
    }
}

/// Builds the loss plan for one group, or `None` when the group carries no
/// training signal under `cfg` (e.g. no positives in pairwise mode).
pub fn plan_group<'a>(
    group: &'a QuestionGroup,
    aug: Option<&'a AugmentedGroup>,
    cfg: &TrainConfig,
) -> Option<GroupPlan<'a>> {
    let ab = &cfg.ablation;
    let aug = aug.filter(|a| !a.is_failed() && cfg.uses_augmentation());
    let synth_answer = aug
        .filter(|_| !ab.disable_ag)
        .and_then(|a| a.synth_answer.as_ref());
    let synth_questions: Vec<(usize, &Text)> = aug
        .filter(|_| !ab.disable_qg)
        .map(|a| a.synth_questions.iter().map(|(j, t)| (*j, t)).collect())
        .unwrap_or_default();
    let q = &group.question;

    if ab.treat_synth_as_positive || cfg.mode == LossMode::Pointwise {
        let mut pairs: Vec<(&Text, &Text)> = group.candidates.iter().map(|c| (q, &c.answer)).collect();
        let mut labels: Vec<bool> = group.candidates.iter().map(|c| c.label.is_relevant()).collect();
        if ab.treat_synth_as_positive {
            if let Some(a) = synth_answer {
                pairs.push((q, a));
                labels.push(true);
            }
            for (j, sq) in &synth_questions {
                pairs.push((sq, &group.negatives[*j]));
                labels.push(true);
            }
        }
        if pairs.is_empty() {
            return None;
        }
        return Some(GroupPlan {
            pairs,
            labels,
            synth_q_pairs: Vec::new(),
            kind: PlanKind::Pointwise,
        });
    }

    let (n_pos, n_neg) = (group.positives.len(), group.negatives.len());
    if n_neg == 0 {
        return None;
    }
    let mut pairs: Vec<(&Text, &Text)> = group
        .positives
        .iter()
        .chain(&group.negatives)
        .map(|a| (q, a))
        .collect();

    if cfg.mode == LossMode::Pairwise || (synth_answer.is_none() && synth_questions.is_empty()) {
        if n_pos == 0 {
            return None;
        }
        let kind = match cfg.mode {
            LossMode::Pairwise => PlanKind::Pairwise { n_pos, n_neg },
            _ => PlanKind::Contrastive {
                n_pos,
                n_neg,
                has_answer: false,
            },
        };
        return Some(GroupPlan {
            pairs,
            labels: Vec::new(),
            synth_q_pairs: vec![None; if cfg.mode == LossMode::Pairwise { 0 } else { n_neg }],
            kind,
        });
    }

    if let Some(a) = synth_answer {
        pairs.push((q, a));
    }
    let mut synth_q_pairs = vec![None; n_neg];
    for (j, sq) in &synth_questions {
        synth_q_pairs[*j] = Some(pairs.len());
        pairs.push((sq, &group.negatives[*j]));
    }
    Some(GroupPlan {
        pairs,
        labels: Vec::new(),
        synth_q_pairs,
        kind: PlanKind::Contrastive {
            n_pos,
            n_neg,
            has_answer: synth_answer.is_some(),
        },
    })
}

/// Loss of one plan and its gradient with respect to the scorer's parameters.
pub fn group_loss<S: Scorer>(scorer: &S, plan: &GroupPlan<'_>, margin: f64) -> Result<(f64, S::Gradient)> {
    let mut scores = Vec::with_capacity(plan.pairs.len());
    let mut grads = Vec::with_capacity(plan.pairs.len());
    for (q, a) in &plan.pairs {
        let (s, g) = scorer.score_with_grad(q, a)?;
        scores.push(s);
        grads.push(g);
    }
    let loss = match plan.kind {
        PlanKind::Pointwise => {
            let items: Vec<(f64, bool)> = scores.iter().copied().zip(plan.labels.iter().copied()).collect();
            pointwise_set_loss(&items)?
        }
        PlanKind::Pairwise { n_pos, .. } => {
            set_pairwise_loss(&scores[..n_pos], &scores[n_pos..], margin)?
        }
        PlanKind::Contrastive {
            n_pos,
            n_neg,
            has_answer,
        } => {
            let synth_questions: Vec<Option<f64>> =
                plan.synth_q_pairs.iter().map(|p| p.map(|i| scores[i])).collect();
            let gs = GroupScores {
                pos: &scores[..n_pos],
                neg: &scores[n_pos..n_pos + n_neg],
                synth_answer: has_answer.then(|| scores[n_pos + n_neg]),
                synth_questions: &synth_questions,
            };
            contrastive_loss(&gs, margin)?
        }
    };
    let mut total = scorer.zero_gradient();
    for (&slot, &g) in &loss.dloss_dscore {
        if g != 0.0 {
            scorer.accumulate(&mut total, g, &grads[plan.pair_of(slot)]);
        }
    }
    Ok((loss.value, total))
}

fn check_augmentation(cfg: &TrainConfig, augmented: Option<&[AugmentedGroup]>) -> Result<()> {
    if cfg.uses_augmentation() && augmented.is_none() {
        return Err(Error::Config(format!(
            "{} training with synthesized pairs needs an augmentation cache \
             (or disable both generators)",
            cfg.mode
        )));
    }
    Ok(())
}

/// Vocabulary over questions, answers and synthesized texts, in corpus order.
pub fn build_vocab(
    groups: &[QuestionGroup],
    augmented: Option<&[AugmentedGroup]>,
    min_freq: usize,
) -> Vocab {
    let mut texts: Vec<&Text> = Vec::new();
    for g in groups {
        texts.push(&g.question);
        texts.extend(g.candidates.iter().map(|c| &c.answer));
    }
    for a in augmented.unwrap_or_default() {
        texts.extend(a.synth_answer.iter());
        texts.extend(a.synth_questions.iter().map(|(_, t)| t));
    }
    Vocab::build(texts, min_freq)
}

/// Initializes a model from `groups` and trains it.
pub fn train(
    groups: &[QuestionGroup],
    augmented: Option<&[AugmentedGroup]>,
    cfg: &TrainConfig,
    dev: Option<&[QuestionGroup]>,
) -> Result<(Model, TrainHistory)> {
    cfg.validate()?;
    check_augmentation(cfg, augmented)?;
    let vocab = build_vocab(groups, augmented, cfg.min_freq);
    let mut model = Model::init(vocab, cfg.embed_dim, cfg.hidden_dim, cfg.seed)?;
    let history = train_scorer(&mut model, groups, augmented, cfg, dev)?;
    Ok((model, history))
}

/// Trains any [`Scorer`] in place. Groups are visited in a freshly shuffled
/// order each epoch with one update per group.
pub fn train_scorer<S: Scorer>(
    scorer: &mut S,
    groups: &[QuestionGroup],
    augmented: Option<&[AugmentedGroup]>,
    cfg: &TrainConfig,
    dev: Option<&[QuestionGroup]>,
) -> Result<TrainHistory> {
    cfg.validate()?;
    check_augmentation(cfg, augmented)?;
    let by_id: HashMap<&str, &AugmentedGroup> = augmented
        .unwrap_or_default()
        .iter()
        .map(|a| (a.base.question_id.as_str(), a))
        .collect();
    let plans: Vec<Option<GroupPlan<'_>>> = groups
        .iter()
        .map(|g| plan_group(g, by_id.get(g.question_id.as_str()).copied(), cfg))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..groups.len()).collect();
    let mut history = TrainHistory::default();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut used = 0usize;
        for &i in &order {
            let Some(plan) = &plans[i] else { continue };
            let (loss, grad) = group_loss(scorer, plan, cfg.margin)?;
            scorer.apply_gradient(&grad, cfg.learning_rate);
            total += loss;
            used += 1;
        }
        let dev_report = dev
            .map(|d| evaluate(scorer, d, &EvalOptions::with_ks(&cfg.eval_ks)))
            .transpose()?;
        let mean_train_loss = if used > 0 { total / used as f64 } else { 0.0 };
        log::info!("epoch {epoch}: mean loss {mean_train_loss:.6} over {used} groups");
        history.epochs.push(EpochRecord {
            epoch,
            mean_train_loss,
            groups_used: used,
            dev: dev_report,
        });
    }
    Ok(history)
}

/// Scores every candidate of every group.
pub fn score_groups<S: Scorer>(
    scorer: &S,
    groups: &[QuestionGroup],
) -> Result<HashMap<(String, usize), f64>> {
    let mut scores = HashMap::new();
    for g in groups {
        for (i, c) in g.candidates.iter().enumerate() {
            scores.insert((g.question_id.clone(), i), scorer.score(&g.question, &c.answer)?);
        }
    }
    Ok(scores)
}

/// Uniform random scores for every candidate; the chance baseline.
pub fn random_scores(groups: &[QuestionGroup], seed: u64) -> HashMap<(String, usize), f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scores = HashMap::new();
    for g in groups {
        for i in 0..g.candidates.len() {
            scores.insert((g.question_id.clone(), i), rng.gen::<f64>());
        }
    }
    scores
}

pub fn evaluate<S: Scorer>(scorer: &S, groups: &[QuestionGroup], opts: &EvalOptions) -> Result<MetricReport> {
    evaluate_run(groups, &score_groups(scorer, groups)?, opts)
}
