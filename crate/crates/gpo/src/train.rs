//! Episodic meta-training over groups and held-out group evaluation.
//!
//! Each training step samples a group and a context size, splits that
//! group's questions into context and targets, and takes an Adam step on the
//! per-question cross-entropy of the target blocks. Validation alignment on
//! separate groups drives checkpoint selection and early stopping.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{split_context_target, GroupDataset, QuestionSample, SplitSpec};
use crate::error::{validation_err, Error, Result};
use crate::metrics::{alignment_score, Distribution, Metric};
use crate::model::{pack_blocks, predict_preferences, GpoModel};
use crate::numcore::{AdamConfig, AdamState, Scalar, Tensor};
use crate::par::{self, Execution};
use crate::report::{AlignmentReport, CellReport, QuestionScore};

/// Anything that maps a group's context questions to predicted answer
/// distributions for query questions.
pub trait PreferencePredictor: Sync {
    fn name(&self) -> String;

    /// One distribution per query block, in order.
    fn predict(&self, context: &[QuestionSample], queries: &[&[Vec<f32>]]) -> Result<Vec<Vec<f64>>>;

    /// Free-form remarks to attach to a report, e.g. degenerate fits.
    fn notes(&self) -> Vec<String> {
        Vec::new()
    }
}

impl<S: Scalar> PreferencePredictor for GpoModel<S> {
    fn name(&self) -> String {
        match self.config.mode {
            crate::model::Mode::Gpo => "gpo".into(),
            crate::model::Mode::CausalAblation => "causal_ablation".into(),
        }
    }

    fn predict(&self, context: &[QuestionSample], queries: &[&[Vec<f32>]]) -> Result<Vec<Vec<f64>>> {
        let pairs = crate::data::Split {
            context: context.to_vec(),
            targets: Vec::new(),
        }
        .context_pairs();
        predict_preferences(self, &pairs, queries)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_steps: usize,
    /// Tasks whose gradients are averaged per optimizer step.
    pub batch_size: usize,
    /// Inclusive range the context size (in questions) is drawn from;
    /// `None` means `[1, n_questions − 1]` for each group.
    pub context_range: Option<[usize; 2]>,
    pub eval_interval: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub val_seeds: Vec<u64>,
    pub val_metric: Metric,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 3e-4,
            max_steps: 2000,
            batch_size: 1,
            context_range: None,
            eval_interval: 100,
            patience: 10,
            seed: 0,
            val_seeds: vec![0, 1, 2],
            val_metric: Metric::Jsd,
        }
    }
}

impl TrainConfig {
    /// Context sizes drawn from 10..=100 questions.
    pub fn wide_context() -> Self {
        TrainConfig {
            context_range: Some([10, 100]),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some([lo, hi]) = self.context_range {
            if lo < 1 || hi < lo {
                return validation_err(format!("context range [{lo}, {hi}] must satisfy 1 ≤ min ≤ max"));
            }
        }
        if self.patience < 1 || self.batch_size < 1 || self.eval_interval < 1 {
            return validation_err("patience, batch_size and eval_interval must be at least 1");
        }
        if self.val_seeds.is_empty() {
            return validation_err("at least one validation seed is required");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return validation_err(format!("learning rate {} must be positive", self.learning_rate));
        }
        Ok(())
    }

    /// Inclusive context-size range usable for a group with `n_questions`.
    pub fn range_for(&self, n_questions: usize) -> Result<(usize, usize)> {
        let (lo, hi) = match self.context_range {
            Some([lo, hi]) => (lo, hi.min(n_questions.saturating_sub(1))),
            None => (1, n_questions.saturating_sub(1)),
        };
        if lo < 1 || lo > hi {
            return validation_err(format!(
                "no valid context size in range for a group with {n_questions} questions"
            ));
        }
        Ok((lo, hi))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub alignment: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub losses: Vec<f64>,
    pub evals: Vec<EvalRecord>,
    pub best_step: usize,
    pub best_alignment: Option<f64>,
    /// Every group whose data reached a gradient update.
    pub trained_groups: Vec<String>,
    pub stopped_early: bool,
}

fn check_dims(model_dim: usize, groups: &[GroupDataset], what: &str) -> Result<()> {
    if groups.is_empty() {
        return validation_err(format!("no {what} groups"));
    }
    if let Some(g) = groups.iter().find(|g| g.embedding_dim() != model_dim) {
        return validation_err(format!(
            "{what} group {} has embedding dim {}, model expects {model_dim}",
            g.group_id,
            g.embedding_dim()
        ));
    }
    Ok(())
}

/// Meta-trains `model` and returns the checkpoint with the best validation
/// alignment together with the run history.
pub fn meta_train<S: Scalar>(
    model: GpoModel<S>,
    train: &[GroupDataset],
    val: &[GroupDataset],
    cfg: &TrainConfig,
) -> Result<(GpoModel<S>, TrainHistory)> {
    cfg.validate()?;
    let d = model.config.d_embed;
    check_dims(d, train, "training")?;
    check_dims(d, val, "validation")?;
    let mut history = TrainHistory::default();
    if cfg.max_steps == 0 {
        return Ok((model, history));
    }
    for g in train {
        cfg.range_for(g.n_questions())?;
    }
    let val_sizes = val
        .iter()
        .map(|g| cfg.range_for(g.n_questions()).map(|(lo, hi)| (lo + hi) / 2))
        .collect::<Result<Vec<_>>>()?;
    let validate = |m: &GpoModel<S>| -> Result<f64> {
        let scores = val
            .iter()
            .zip(&val_sizes)
            .map(|(g, &mq)| {
                evaluate_groups(m, std::slice::from_ref(g), mq, &cfg.val_seeds, cfg.val_metric).map(|r| r.mean)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(crate::metrics::mean(scores))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.learning_rate), &model.params);
    let mut trained = BTreeSet::new();
    let mut model = model;
    let first = validate(&model)?;
    history.evals.push(EvalRecord { step: 0, alignment: first });
    let mut best = (model.clone(), 0usize, first);
    let mut stale = 0usize;

    for step in 1..=cfg.max_steps {
        let mut total_loss = 0.0;
        let mut acc: Option<Vec<Tensor<S>>> = None;
        for _ in 0..cfg.batch_size {
            let group = &train[rng.random_range(0..train.len())];
            let (lo, hi) = cfg.range_for(group.n_questions())?;
            let spec = SplitSpec {
                context_questions: rng.random_range(lo..=hi),
                seed: rng.random(),
            };
            let split = split_context_target(group, spec)?;
            let seq = pack_blocks(d, &split.context_pairs(), &split.target_blocks())?;
            let (loss, grads) = model.loss_and_grads(&seq, &split.target_preferences())?;
            trained.insert(group.group_id.clone());
            total_loss += loss;
            acc = Some(match acc {
                None => grads,
                Some(mut a) => {
                    for (x, g) in a.iter_mut().zip(&grads) {
                        for (p, q) in x.data_mut().iter_mut().zip(g.data()) {
                            *p = *p + *q;
                        }
                    }
                    a
                }
            });
        }
        let mut grads = acc.expect("batch_size ≥ 1");
        if cfg.batch_size > 1 {
            let k = S::of(1.0 / cfg.batch_size as f64);
            for g in grads.iter_mut() {
                g.data_mut().iter_mut().for_each(|v| *v = *v * k);
            }
        }
        adam.step(&mut model.params, &grads)?;
        history.losses.push(total_loss / cfg.batch_size as f64);

        if step % cfg.eval_interval == 0 || step == cfg.max_steps {
            let score = validate(&model)?;
            history.evals.push(EvalRecord { step, alignment: score });
            if score > best.2 {
                best = (model.clone(), step, score);
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    history.stopped_early = step < cfg.max_steps;
                    break;
                }
            }
        }
    }
    history.best_step = best.1;
    history.best_alignment = Some(best.2);
    history.trained_groups = trained.into_iter().collect();
    Ok((best.0, history))
}

/// Scores `predictor` on every (group, seed) cell with `context_questions`
/// whole questions as context and the rest as targets.
pub fn evaluate_groups(
    predictor: &dyn PreferencePredictor,
    groups: &[GroupDataset],
    context_questions: usize,
    seeds: &[u64],
    metric: Metric,
) -> Result<AlignmentReport> {
    evaluate_groups_with(Execution::default(), predictor, groups, context_questions, seeds, metric)
}

pub fn evaluate_groups_with(
    exec: Execution,
    predictor: &dyn PreferencePredictor,
    groups: &[GroupDataset],
    context_questions: usize,
    seeds: &[u64],
    metric: Metric,
) -> Result<AlignmentReport> {
    if groups.is_empty() || seeds.is_empty() {
        return validation_err("evaluation needs at least one group and one seed");
    }
    for g in groups {
        let n = g.n_questions();
        if context_questions < 1 || context_questions >= n {
            return validation_err(format!(
                "group {}: context size {context_questions} out of range 1..{} ",
                g.group_id,
                n.saturating_sub(1)
            ));
        }
        if metric == Metric::Wasserstein {
            if let Some(q) = g.questions.iter().find(|q| !q.ordinal) {
                return validation_err(format!(
                    "question {} of group {} is not ordinal; wasserstein alignment needs ordinal options",
                    q.question_id, g.group_id
                ));
            }
        }
    }
    let cells: Vec<(usize, u64)> = (0..groups.len())
        .flat_map(|g| seeds.iter().map(move |&s| (g, s)))
        .collect();
    let results = par::map(exec, &cells, |&(g, seed)| {
        score_cell(predictor, &groups[g], context_questions, seed, metric)
    });
    let cells = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mut report = AlignmentReport::from_cells(predictor.name(), metric, context_questions, seeds.to_vec(), cells);
    report.notes = predictor.notes();
    Ok(report)
}

fn score_cell(
    predictor: &dyn PreferencePredictor,
    group: &GroupDataset,
    context_questions: usize,
    seed: u64,
    metric: Metric,
) -> Result<CellReport> {
    let split = split_context_target(group, SplitSpec { context_questions, seed })?;
    let preds = predictor.predict(&split.context, &split.target_blocks())?;
    if preds.len() != split.targets.len() {
        return Err(Error::Contract(format!(
            "{} returned {} distributions for {} questions",
            predictor.name(),
            preds.len(),
            split.targets.len()
        )));
    }
    let mut p_map = BTreeMap::new();
    let mut t_map = BTreeMap::new();
    for (q, p) in split.targets.iter().zip(preds) {
        let mut pd = Distribution::new(p)?;
        let mut td = Distribution::new(q.preferences.clone())?;
        if let Some(o) = &q.ordinals {
            pd = pd.with_ordinals(o.clone())?;
            td = td.with_ordinals(o.clone())?;
        }
        p_map.insert(q.question_id.clone(), pd);
        t_map.insert(q.question_id.clone(), td);
    }
    let score = alignment_score(&p_map, &t_map, metric)?;
    Ok(CellReport {
        group_id: group.group_id.clone(),
        seed,
        mean: score.mean,
        questions: score
            .per_question
            .into_iter()
            .map(|(question_id, similarity)| QuestionScore { question_id, similarity })
            .collect(),
    })
}

/// Mean Shannon entropy (nats) of the given distributions: the lowest
/// achievable mean per-question cross-entropy against them.
pub fn entropy_floor<'a>(dists: impl IntoIterator<Item = &'a [f64]>) -> f64 {
    crate::metrics::mean(
        dists
            .into_iter()
            .map(|p| -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()),
    )
}
