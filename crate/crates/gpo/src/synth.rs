//! Seeded synthetic preference worlds.
//!
//! Every viewpoint is a unit-norm Gaussian vector shared by all groups. A
//! group `g` has a latent weight vector `w_g` and prefers option `i` of a
//! question with probability `softmax_i(w_g · x_i / τ)`. Group weights mix a
//! population direction shared by everyone with a group-specific one, so
//! groups overlap partly but genuinely disagree.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{EmbeddingStore, GroupDataset, GroupFile, QuestionRecord};
use crate::error::{dim_err, validation_err, Result};
use crate::metrics::jsd_alignment;
use crate::numcore::kernels::softmax_in_place;

pub const EMBEDDINGS_FILE: &str = "embeddings.gpe";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_groups: usize,
    pub n_questions: usize,
    pub options_per_question: usize,
    pub dim: usize,
    pub temperature: f64,
    pub seed: u64,
    /// Weight of the group-specific direction in `w_g`; the shared population
    /// direction gets `√(1 − spread²)`. 1 makes groups independent.
    #[serde(default = "default_spread")]
    pub spread: f64,
    /// Group-specific directions are drawn from a random subspace of this
    /// dimension; 0 (or ≥ `dim`) uses the whole space.
    #[serde(default = "default_factors")]
    pub factors: usize,
}

fn default_spread() -> f64 {
    0.6
}

fn default_factors() -> usize {
    FACTORS
}

pub const FACTORS: usize = 3;

impl SynthSpec {
    pub fn new(n_groups: usize, n_questions: usize, options: usize, dim: usize, temperature: f64, seed: u64) -> Self {
        SynthSpec {
            n_groups,
            n_questions,
            options_per_question: options,
            dim,
            temperature,
            seed,
            spread: default_spread(),
            factors: default_factors(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_groups < 3 {
            return validation_err(format!("synth: need at least 3 groups, got {}", self.n_groups));
        }
        for (name, v) in [
            ("questions", self.n_questions),
            ("options per question", self.options_per_question),
            ("embedding dim", self.dim),
        ] {
            if v < 2 {
                return validation_err(format!("synth: {name} must be at least 2, got {v}"));
            }
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return validation_err(format!("synth: temperature must be finite and positive, got {}", self.temperature));
        }
        if !(0.0..=1.0).contains(&self.spread) {
            return validation_err(format!("synth: spread must lie in [0, 1], got {}", self.spread));
        }
        Ok(())
    }
}

/// Ground truth behind a generated world.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthWorld {
    pub spec: SynthSpec,
    /// `w_g` per group.
    pub weights: Vec<Vec<f64>>,
    /// Viewpoint embeddings per question, exactly as stored (f32 precision).
    pub embeddings: Vec<Vec<Vec<f32>>>,
    /// `P_g(q)`, indexed `[group][question]`.
    pub truths: Vec<Vec<Vec<f64>>>,
}

impl SynthWorld {
    /// Mean JSD alignment over all pairs of distinct groups' ground truths.
    pub fn mean_pairwise_alignment(&self) -> f64 {
        let g = self.truths.len();
        let mut total = 0.0;
        let mut pairs = 0usize;
        for a in 0..g {
            for b in a + 1..g {
                let s: f64 = self.truths[a]
                    .iter()
                    .zip(&self.truths[b])
                    .map(|(p, q)| jsd_alignment(p, q).expect("same length"))
                    .sum();
                total += s / self.truths[a].len() as f64;
                pairs += 1;
            }
        }
        total / pairs as f64
    }
}

/// `softmax_i(w · x_i / τ)` over one question block.
pub fn true_distribution(w: &[f64], block: &[Vec<f32>], temperature: f64) -> Result<Vec<f64>> {
    if let Some(x) = block.iter().find(|x| x.len() != w.len()) {
        return dim_err(format!("weight has dimension {}, viewpoint {}", w.len(), x.len()));
    }
    let mut logits: Vec<f64> = block
        .iter()
        .map(|x| x.iter().zip(w).map(|(&a, &b)| a as f64 * b).sum::<f64>() / temperature)
        .collect();
    softmax_in_place(&mut logits);
    Ok(logits)
}

fn normal_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn group_direction(rng: &mut ChaCha8Rng, basis: &[Vec<f64>], full: bool) -> Vec<f64> {
    if full {
        return normal_vec(rng, basis[0].len());
    }
    let z = normal_vec(rng, basis.len());
    let scale = (basis.len() as f64).sqrt();
    (0..basis[0].len())
        .map(|i| basis.iter().zip(&z).map(|(b, c)| b[i] * c).sum::<f64>() / scale)
        .collect()
}

pub fn group_id(g: usize) -> String {
    format!("group_{g:02}")
}

pub fn generate_world(spec: &SynthSpec) -> Result<(SynthWorld, Vec<GroupDataset>, Arc<EmbeddingStore>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (t, d) = (spec.options_per_question, spec.dim);
    let embeddings: Vec<Vec<Vec<f32>>> = (0..spec.n_questions)
        .map(|_| {
            (0..t)
                .map(|_| {
                    let v = normal_vec(&mut rng, d);
                    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                    v.iter().map(|a| (a / norm) as f32).collect()
                })
                .collect()
        })
        .collect();
    let shared = normal_vec(&mut rng, d);
    let keep = (1.0 - spec.spread * spec.spread).sqrt();
    let k = if spec.factors == 0 || spec.factors >= d { d } else { spec.factors };
    let basis: Vec<Vec<f64>> = (0..k).map(|_| normal_vec(&mut rng, d)).collect();
    let weights: Vec<Vec<f64>> = (0..spec.n_groups)
        .map(|_| {
            group_direction(&mut rng, &basis, k == d)
                .iter()
                .zip(&shared)
                .map(|(own, s)| keep * s + spec.spread * own)
                .collect()
        })
        .collect();
    let truths = weights
        .iter()
        .map(|w| {
            embeddings
                .iter()
                .map(|block| true_distribution(w, block, spec.temperature))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let store = Arc::new(EmbeddingStore::new(d, embeddings.iter().flatten().flatten().copied().collect())?);
    let datasets = truths
        .iter()
        .enumerate()
        .map(|(g, per_q)| {
            let file = GroupFile {
                group_id: group_id(g),
                questions: per_q
                    .iter()
                    .enumerate()
                    .map(|(q, p)| QuestionRecord {
                        question_id: format!("q{q:03}"),
                        ordinal: false,
                        options: (1..=t).map(|i| format!("option_{i}")).collect(),
                        preferences: p.clone(),
                        embedding_refs: (0..t).map(|i| (q * t + i) as u32).collect(),
                        option_ordinals: None,
                    })
                    .collect(),
            };
            GroupDataset::from_file_record(file, store.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    let world = SynthWorld {
        spec: spec.clone(),
        weights,
        embeddings,
        truths,
    };
    Ok((world, datasets, store))
}

/// Writes `group_XX.json` per group plus the shared embedding file into
/// `dir`, returning the dataset paths in group order.
pub fn write_world(dir: impl AsRef<Path>, datasets: &[GroupDataset], store: &EmbeddingStore) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    store.write(dir.join(EMBEDDINGS_FILE))?;
    datasets
        .iter()
        .map(|ds| {
            let path = dir.join(format!("{}.json", ds.group_id));
            ds.write(&path)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weight_is_uniform() {
        let block = vec![vec![1.0f32, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]];
        let p = true_distribution(&[0.0, 0.0], &block, 0.5).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn duplicate_viewpoints_tie() {
        let block = vec![vec![0.3f32, 0.4], vec![0.3, 0.4], vec![1.0, 0.0]];
        let p = true_distribution(&[1.5, -2.0], &block, 0.5).unwrap();
        assert_eq!(p[0], p[1]);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(true_distribution(&[1.0], &[vec![1.0, 2.0]], 1.0).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(SynthSpec::new(2, 10, 4, 8, 0.5, 0).validate().is_err());
        assert!(SynthSpec::new(3, 10, 1, 8, 0.5, 0).validate().is_err());
        assert!(SynthSpec::new(3, 10, 4, 8, 0.0, 0).validate().is_err());
        assert!(SynthSpec::new(3, 10, 4, 8, f64::INFINITY, 0).validate().is_err());
        assert!(SynthSpec::new(3, 2, 2, 2, 1.0, 0).validate().is_ok());
    }

    #[test]
    fn huge_temperature_flattens_everything() {
        let (world, _, _) = generate_world(&SynthSpec::new(3, 10, 4, 8, 1e6, 1)).unwrap();
        for p in world.truths.iter().flatten().flatten() {
            assert!((p - 0.25).abs() < 1e-3);
        }
    }
}
