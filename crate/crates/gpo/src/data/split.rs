use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::GroupDataset;
use crate::error::{validation_err, Result};
use crate::model::ContextPair;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    /// Number of whole questions placed in the context.
    pub context_questions: usize,
    pub seed: u64,
}

/// One question with its viewpoint embeddings and the group's answers.
#[derive(Clone, Debug, PartialEq)]
pub struct QuestionSample {
    pub question_id: String,
    pub embeddings: Vec<Vec<f32>>,
    pub preferences: Vec<f64>,
    pub ordinals: Option<Vec<u32>>,
}

impl QuestionSample {
    pub fn n_options(&self) -> usize {
        self.embeddings.len()
    }
}

/// Question-atomic partition of one group's data.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub context: Vec<QuestionSample>,
    pub targets: Vec<QuestionSample>,
}

impl Split {
    /// Every viewpoint of every context question with its preference score.
    pub fn context_pairs(&self) -> Vec<ContextPair> {
        self.context
            .iter()
            .flat_map(|q| {
                q.embeddings
                    .iter()
                    .zip(&q.preferences)
                    .map(|(x, &y)| ContextPair { x: x.clone(), y })
            })
            .collect()
    }

    pub fn target_blocks(&self) -> Vec<&[Vec<f32>]> {
        self.targets.iter().map(|q| q.embeddings.as_slice()).collect()
    }

    /// Target preferences concatenated in block order.
    pub fn target_preferences(&self) -> Vec<f64> {
        self.targets.iter().flat_map(|q| q.preferences.iter().copied()).collect()
    }
}

/// Randomly assigns `spec.context_questions` whole questions to the context
/// and the rest to the targets. Both sides keep dataset order.
pub fn split_context_target(ds: &GroupDataset, spec: SplitSpec) -> Result<Split> {
    let n = ds.n_questions();
    let m = spec.context_questions;
    if m < 1 || m >= n {
        return validation_err(format!(
            "group {}: context size {m} must lie in 1..{} for {n} questions",
            ds.group_id,
            n.saturating_sub(1)
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut in_context = vec![false; n];
    for &i in &order[..m] {
        in_context[i] = true;
    }
    let mut split = Split {
        context: Vec::with_capacity(m),
        targets: Vec::with_capacity(n - m),
    };
    for (q, &ctx) in ds.questions.iter().zip(&in_context) {
        let sample = QuestionSample {
            question_id: q.question_id.clone(),
            embeddings: ds.embeddings(q),
            preferences: q.preferences.clone(),
            ordinals: q.ordinals(),
        };
        if ctx {
            split.context.push(sample);
        } else {
            split.targets.push(sample);
        }
    }
    Ok(split)
}
