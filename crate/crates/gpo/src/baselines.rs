//! Comparators that need no language model: uniform guessing, a per-group
//! reward regressor on the raw viewpoint embeddings, and the mean context
//! answer pattern.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::QuestionSample;
use crate::error::{validation_err, Result};
use crate::model::ContextPair;
use crate::numcore::kernels::softmax_in_place;
use crate::numcore::{AdamConfig, AdamState, Tape, Tensor};
use crate::train::PreferencePredictor;

pub fn uniform_predict(n_options: usize) -> Result<Vec<f64>> {
    if n_options < 2 {
        return validation_err(format!("uniform prediction needs at least 2 options, got {n_options}"));
    }
    Ok(vec![1.0 / n_options as f64; n_options])
}

#[derive(Clone, Copy, Debug, Default)]
pub struct UniformBaseline;

impl PreferencePredictor for UniformBaseline {
    fn name(&self) -> String {
        "uniform".into()
    }

    fn predict(&self, _context: &[QuestionSample], queries: &[&[Vec<f32>]]) -> Result<Vec<Vec<f64>>> {
        queries.iter().map(|b| uniform_predict(b.len())).collect()
    }
}

/// Elementwise mean of the context distributions with `n_options` options,
/// or uniform when there are none.
pub fn context_mean_predict(context: &[QuestionSample], n_options: usize) -> Result<Vec<f64>> {
    let matching: Vec<&[f64]> = context
        .iter()
        .filter(|q| q.preferences.len() == n_options)
        .map(|q| q.preferences.as_slice())
        .collect();
    if matching.is_empty() {
        return uniform_predict(n_options);
    }
    let k = matching.len() as f64;
    let mut out = vec![0.0; n_options];
    for p in &matching {
        for (o, v) in out.iter_mut().zip(p.iter()) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= k);
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|o| *o /= total);
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ContextMeanBaseline;

impl PreferencePredictor for ContextMeanBaseline {
    fn name(&self) -> String {
        "context_mean".into()
    }

    fn predict(&self, context: &[QuestionSample], queries: &[&[Vec<f32>]]) -> Result<Vec<Vec<f64>>> {
        queries.iter().map(|b| context_mean_predict(context, b.len())).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardMlpConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub max_steps: usize,
    pub seed: u64,
}

impl Default for RewardMlpConfig {
    fn default() -> Self {
        RewardMlpConfig {
            hidden: vec![128, 128],
            learning_rate: 1e-3,
            max_steps: 300,
            seed: 0,
        }
    }
}

impl RewardMlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return validation_err("reward MLP needs at least one non-empty hidden layer");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return validation_err(format!("learning rate {} must be positive", self.learning_rate));
        }
        Ok(())
    }
}

/// Fitted per-group regressor from viewpoint embedding to preference score.
#[derive(Clone, Debug)]
pub struct RewardMlp {
    /// `(weight [fan_in × fan_out], bias [fan_out])` per layer; GELU between.
    layers: Vec<(Tensor<f64>, Tensor<f64>)>,
    dim: usize,
    /// Every context target (or every context input) was identical.
    pub degenerate: bool,
    /// Training MSE after the last step.
    pub final_mse: f64,
}

impl RewardMlp {
    fn forward(&self, tape: &mut Tape<f64>, x: &[Vec<f32>], trainable: bool) -> Result<(Vec<crate::numcore::Var>, crate::numcore::Var)> {
        if let Some(v) = x.iter().find(|v| v.len() != self.dim) {
            return crate::error::dim_err(format!("reward MLP expects dim {}, got {}", self.dim, v.len()));
        }
        let data: Vec<f64> = x.iter().flatten().map(|&v| v as f64).collect();
        let mut h = tape.constant(Tensor::new([x.len(), self.dim], data)?);
        let mut vars = Vec::with_capacity(self.layers.len() * 2);
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let (w, b) = if trainable {
                (tape.param(w.clone()), tape.param(b.clone()))
            } else {
                (tape.constant(w.clone()), tape.constant(b.clone()))
            };
            vars.push(w);
            vars.push(b);
            h = tape.matmul(h, w)?;
            h = tape.add_row(h, b)?;
            if i + 1 < self.layers.len() {
                h = tape.gelu(h);
            }
        }
        let out = tape.reshape(h, [x.len()])?;
        Ok((vars, out))
    }

    /// Raw predicted scores, one per viewpoint.
    pub fn scores(&self, x: &[Vec<f32>]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let (_, out) = self.forward(&mut tape, x, false)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Softmax over each block's predicted scores.
    pub fn predict(&self, blocks: &[&[Vec<f32>]]) -> Result<Vec<Vec<f64>>> {
        blocks
            .iter()
            .map(|b| {
                if b.len() < 2 {
                    return validation_err(format!("question block has {} viewpoints, need 2", b.len()));
                }
                let mut s = self.scores(b)?;
                softmax_in_place(&mut s);
                Ok(s)
            })
            .collect()
    }
}

/// Full-batch Adam on mean squared error over the context pairs.
pub fn reward_mlp_fit(context: &[ContextPair], cfg: &RewardMlpConfig) -> Result<RewardMlp> {
    cfg.validate()?;
    if context.len() < 2 {
        return validation_err(format!("reward MLP needs at least 2 context pairs, got {}", context.len()));
    }
    let dim = context[0].x.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut widths = vec![dim];
    widths.extend(&cfg.hidden);
    widths.push(1);
    let mut mlp = RewardMlp {
        layers: widths
            .windows(2)
            .map(|w| {
                let a = (6.0 / (w[0] + w[1]) as f64).sqrt();
                let data = (0..w[0] * w[1]).map(|_| rng.random_range(-a..a)).collect();
                (
                    Tensor::new([w[0], w[1]], data).expect("shape"),
                    Tensor::zeros([w[1]]),
                )
            })
            .collect(),
        dim,
        degenerate: context.iter().all(|p| p.y == context[0].y) || context.iter().all(|p| p.x == context[0].x),
        final_mse: f64::NAN,
    };
    let xs: Vec<Vec<f32>> = context.iter().map(|p| p.x.clone()).collect();
    let ys: Vec<f64> = context.iter().map(|p| p.y).collect();
    let flat = |m: &RewardMlp| -> Vec<Tensor<f64>> { m.layers.iter().flat_map(|(w, b)| [w.clone(), b.clone()]).collect() };
    let mut params = flat(&mlp);
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.learning_rate), &params);
    for _ in 0..cfg.max_steps {
        let mut tape = Tape::new();
        let (vars, out) = mlp.forward(&mut tape, &xs, true)?;
        let loss = tape.mse(out, &ys)?;
        let grads = tape.backward(loss)?;
        let g: Vec<Tensor<f64>> = vars.iter().zip(&params).map(|(&v, p)| grads.get_or_zeros(v, p)).collect();
        adam.step(&mut params, &g)?;
        for (layer, pair) in mlp.layers.iter_mut().zip(params.chunks(2)) {
            *layer = (pair[0].clone(), pair[1].clone());
        }
    }
    let s = mlp.scores(&xs)?;
    mlp.final_mse = crate::metrics::mean(s.iter().zip(&ys).map(|(a, b)| (a - b) * (a - b)));
    Ok(mlp)
}

/// Fits a fresh [`RewardMlp`] on each evaluation cell's context.
#[derive(Debug, Default)]
pub struct RewardMlpBaseline {
    pub config: RewardMlpConfig,
    degenerate_fits: AtomicUsize,
}

impl RewardMlpBaseline {
    pub fn new(config: RewardMlpConfig) -> Self {
        RewardMlpBaseline {
            config,
            degenerate_fits: AtomicUsize::new(0),
        }
    }

    pub fn degenerate_fits(&self) -> usize {
        self.degenerate_fits.load(Ordering::Relaxed)
    }
}

impl PreferencePredictor for RewardMlpBaseline {
    fn name(&self) -> String {
        "reward_mlp".into()
    }

    fn predict(&self, context: &[QuestionSample], queries: &[&[Vec<f32>]]) -> Result<Vec<Vec<f64>>> {
        let pairs = crate::data::Split {
            context: context.to_vec(),
            targets: Vec::new(),
        }
        .context_pairs();
        let mlp = reward_mlp_fit(&pairs, &self.config)?;
        if mlp.degenerate {
            self.degenerate_fits.fetch_add(1, Ordering::Relaxed);
        }
        mlp.predict(queries)
    }

    fn notes(&self) -> Vec<String> {
        match self.degenerate_fits() {
            0 => Vec::new(),
            n => vec![format!("{n} reward MLP fits had degenerate (all-identical) context")],
        }
    }
}
