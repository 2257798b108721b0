//! Alignment between two opinion distributions.
//!
//! Both similarities lie in `[0, 1]` with 1 meaning identical distributions:
//!
//! - Wasserstein alignment, for ordinal options mapped to `1..=N`:
//!   `1 − WD(p, q) / (N − 1)`.
//! - Jensen-Shannon alignment, for unordered options: `1 − √JS(p, q)` with
//!   the divergence in bits.
//!
//! An alignment score over a question set is the plain mean of the
//! per-question similarities.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, validation_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Wasserstein,
    Jsd,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Wasserstein => "wasserstein",
            Metric::Jsd => "jsd",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wasserstein" => Ok(Metric::Wasserstein),
            "jsd" => Ok(Metric::Jsd),
            other => validation_err(format!("unknown metric {other:?} (wasserstein|jsd)")),
        }
    }
}

/// Probability vector over a question's options, optionally with the
/// ordinal position (1-based) of each option.
#[derive(Clone, Debug, PartialEq)]
pub struct Distribution {
    probs: Vec<f64>,
    ordinals: Option<Vec<u32>>,
}

impl Distribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return validation_err("empty distribution");
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return validation_err(format!("distribution has negative or non-finite mass: {probs:?}"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return validation_err(format!("distribution sums to {total}"));
        }
        Ok(Distribution { probs, ordinals: None })
    }

    pub fn with_ordinals(mut self, ordinals: Vec<u32>) -> Result<Self> {
        let n = self.probs.len();
        let mut sorted = ordinals.clone();
        sorted.sort_unstable();
        if sorted != (1..=n as u32).collect::<Vec<_>>() {
            return validation_err(format!("ordinals {ordinals:?} are not a permutation of 1..{n}"));
        }
        self.ordinals = Some(ordinals);
        Ok(self)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn ordinals(&self) -> Option<&[u32]> {
        self.ordinals.as_deref()
    }

    /// Mass listed by ordinal position `1..=N`; option order when unordered.
    pub fn by_ordinal(&self) -> Vec<f64> {
        match &self.ordinals {
            None => self.probs.clone(),
            Some(ord) => {
                let mut out = vec![0.0; self.probs.len()];
                for (&p, &o) in self.probs.iter().zip(ord) {
                    out[o as usize - 1] = p;
                }
                out
            }
        }
    }
}

/// 1-D earth mover's distance on the unit-spaced support `1..=N`.
pub fn wasserstein_distance(p1: &[f64], p2: &[f64]) -> Result<f64> {
    if p1.len() != p2.len() {
        return dim_err(format!("distribution lengths differ: {} vs {}", p1.len(), p2.len()));
    }
    let (mut c1, mut c2, mut wd) = (0.0, 0.0, 0.0);
    for k in 0..p1.len().saturating_sub(1) {
        c1 += p1[k];
        c2 += p2[k];
        wd += (c1 - c2).abs();
    }
    Ok(wd)
}

/// `1 − WD(p1, p2) / (N − 1)` for distributions over `N` ordered options.
pub fn wasserstein_alignment(p1: &[f64], p2: &[f64], n: usize) -> Result<f64> {
    if n < 2 {
        return validation_err(format!("wasserstein alignment needs N ≥ 2, got {n}"));
    }
    if p1.len() != n || p2.len() != n {
        return dim_err(format!(
            "wasserstein alignment over N={n} got lengths {} and {}",
            p1.len(),
            p2.len()
        ));
    }
    let wd = wasserstein_distance(p1, p2)?;
    Ok((1.0 - wd / (n - 1) as f64).clamp(0.0, 1.0))
}

fn kl_bits(p: &[f64], m: &[f64]) -> f64 {
    p.iter()
        .zip(m)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &mi)| pi * (pi / mi).log2())
        .sum()
}

/// Jensen-Shannon divergence in bits, in `[0, 1]`.
pub fn js_divergence(p1: &[f64], p2: &[f64]) -> Result<f64> {
    if p1.len() != p2.len() {
        return dim_err(format!("distribution lengths differ: {} vs {}", p1.len(), p2.len()));
    }
    let m: Vec<f64> = p1.iter().zip(p2).map(|(a, b)| 0.5 * (a + b)).collect();
    Ok(0.5 * kl_bits(p1, &m) + 0.5 * kl_bits(p2, &m))
}

/// `1 − √JS(p1, p2)`.
pub fn jsd_alignment(p1: &[f64], p2: &[f64]) -> Result<f64> {
    let js = js_divergence(p1, p2)?;
    Ok((1.0 - js.max(0.0).sqrt()).clamp(0.0, 1.0))
}

/// Similarity of two distributions under `metric`. Wasserstein requires
/// ordinal supports and compares mass by ordinal position.
pub fn similarity(metric: Metric, a: &Distribution, b: &Distribution) -> Result<f64> {
    match metric {
        Metric::Jsd => jsd_alignment(a.probs(), b.probs()),
        Metric::Wasserstein => {
            let ord = a.ordinals().or(b.ordinals());
            let ord = ord.ok_or_else(|| Error::Validation("wasserstein alignment needs ordinal options".into()))?;
            let a = a.clone().with_ordinals(ord.to_vec())?;
            let b = b.clone().with_ordinals(ord.to_vec())?;
            wasserstein_alignment(&a.by_ordinal(), &b.by_ordinal(), a.probs().len())
        }
    }
}

/// Mean per-question similarity over a question set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentScore {
    pub metric: Metric,
    pub per_question: Vec<(String, f64)>,
    pub mean: f64,
}

pub fn alignment_score(
    preds: &BTreeMap<String, Distribution>,
    truths: &BTreeMap<String, Distribution>,
    metric: Metric,
) -> Result<AlignmentScore> {
    if truths.is_empty() {
        return validation_err("alignment score over an empty question set");
    }
    if preds.len() != truths.len() || preds.keys().zip(truths.keys()).any(|(a, b)| a != b) {
        return validation_err("predicted and true question sets differ");
    }
    let per_question = truths
        .iter()
        .map(|(q, t)| similarity(metric, &preds[q], t).map(|s| (q.clone(), s)))
        .collect::<Result<Vec<_>>>()?;
    let mean = mean(per_question.iter().map(|(_, s)| *s));
    Ok(AlignmentScore {
        metric,
        per_question,
        mean,
    })
}

/// Arithmetic mean, summed left to right. `NaN` for an empty input.
pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n as f64
}

/// Sample standard deviation (n − 1 denominator); 0 for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values.iter().copied());
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}
