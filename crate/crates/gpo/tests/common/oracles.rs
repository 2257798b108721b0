//! Independent reference implementations and random instances.
#![allow(dead_code)]

use gpo::model::{ContextPair, TargetToken};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_dist(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    // Occasionally zero out entries to exercise the 0·log 0 convention.
    let raw: Vec<f64> = (0..n)
        .map(|_| if rng.random_bool(0.15) { 0.0 } else { rng.random_range(0.0..1.0) })
        .collect();
    let s: f64 = raw.iter().sum();
    if s == 0.0 {
        let mut v = vec![0.0; n];
        v[0] = 1.0;
        return v;
    }
    raw.iter().map(|v| v / s).collect()
}

/// Earth mover's distance on unit-spaced support by greedily moving mass
/// from left to right.
pub fn greedy_emd(p: &[f64], q: &[f64]) -> f64 {
    let mut supply: Vec<f64> = p.to_vec();
    let mut demand: Vec<f64> = q.to_vec();
    let mut cost = 0.0;
    let (mut i, mut j) = (0, 0);
    while i < supply.len() && j < demand.len() {
        if supply[i] <= 1e-15 {
            i += 1;
            continue;
        }
        if demand[j] <= 1e-15 {
            j += 1;
            continue;
        }
        let moved = supply[i].min(demand[j]);
        cost += moved * (i as f64 - j as f64).abs();
        supply[i] -= moved;
        demand[j] -= moved;
    }
    cost
}

/// Jensen-Shannon divergence in bits by direct summation.
pub fn jsd_oracle(p: &[f64], q: &[f64]) -> f64 {
    let mut d = 0.0;
    for (a, b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        if *a > 0.0 {
            d += 0.5 * a * (a / m).log2();
        }
        if *b > 0.0 {
            d += 0.5 * b * (b / m).log2();
        }
    }
    d
}

pub fn random_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
    (0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

/// 1–7 context pairs and 1–3 target blocks of 2–4 viewpoints.
pub fn random_instance(rng: &mut ChaCha8Rng, d: usize) -> (Vec<ContextPair>, Vec<TargetToken>) {
    let m = rng.random_range(1..8);
    let context = (0..m)
        .map(|_| ContextPair {
            x: random_vector(rng, d),
            y: rng.random_range(0.0..1.0),
        })
        .collect();
    let blocks = rng.random_range(1..4);
    let mut targets = Vec::new();
    for b in 0..blocks {
        for _ in 0..rng.random_range(2..5) {
            targets.push(TargetToken { x: random_vector(rng, d), block: b });
        }
    }
    (context, targets)
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
