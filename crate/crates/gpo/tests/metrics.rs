mod common;

use std::collections::BTreeMap;

use common::oracles::{greedy_emd, jsd_oracle, random_dist};

use gpo::metrics::{
    alignment_score, js_divergence, jsd_alignment, similarity, wasserstein_alignment, wasserstein_distance,
    Distribution, Metric,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn hand_cases() {
    assert_eq!(wasserstein_alignment(&[1.0, 0.0], &[0.0, 1.0], 2).unwrap(), 0.0);
    assert_eq!(jsd_alignment(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    assert_eq!(js_divergence(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
    assert_eq!(wasserstein_distance(&[0.5, 0.5, 0.0], &[0.0, 0.5, 0.5]).unwrap(), 1.0);
    assert_eq!(wasserstein_alignment(&[0.5, 0.5, 0.0], &[0.0, 0.5, 0.5], 3).unwrap(), 0.5);
    assert_eq!(wasserstein_alignment(&[0.5, 0.5], &[1.0, 0.0], 2).unwrap(), 0.5);
    let p = [0.2, 0.3, 0.5];
    assert_eq!(wasserstein_alignment(&p, &p, 3).unwrap(), 1.0);
    assert_eq!(jsd_alignment(&p, &p).unwrap(), 1.0);
    assert!(wasserstein_alignment(&[1.0], &[1.0], 1).is_err());
    assert!(wasserstein_alignment(&[0.5, 0.5], &[0.2, 0.3, 0.5], 2).is_err());
    assert!(jsd_alignment(&[0.5, 0.5], &[0.2, 0.3, 0.5]).is_err());
}

#[test]
fn wasserstein_matches_transport_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let n = rng.random_range(2..9);
        let (p, q) = (random_dist(&mut rng, n), random_dist(&mut rng, n));
        let want = 1.0 - greedy_emd(&p, &q) / (n - 1) as f64;
        let got = wasserstein_alignment(&p, &q, n).unwrap();
        assert!((got - want).abs() < 1e-9, "{p:?} {q:?}: {got} vs {want}");
    }
}

#[test]
fn jsd_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..1000 {
        let n = rng.random_range(2..9);
        let (p, q) = (random_dist(&mut rng, n), random_dist(&mut rng, n));
        let want = 1.0 - jsd_oracle(&p, &q).max(0.0).sqrt();
        let got = jsd_alignment(&p, &q).unwrap();
        assert!((got - want).abs() < 1e-9, "{p:?} {q:?}: {got} vs {want}");
    }
}

fn dist_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..8).prop_flat_map(|n| {
        (prop::collection::vec(0.0f64..1.0, n), prop::collection::vec(0.0f64..1.0, n)).prop_map(|(a, b)| {
            let norm = |v: Vec<f64>| {
                let s: f64 = v.iter().sum();
                if s <= 0.0 {
                    let mut u = vec![0.0; v.len()];
                    u[0] = 1.0;
                    u
                } else {
                    v.iter().map(|x| x / s).collect()
                }
            };
            (norm(a), norm(b))
        })
    })
}

proptest! {
    #[test]
    fn symmetric_bounded_and_reflexive((p, q) in dist_strategy()) {
        let n = p.len();
        let (w1, w2) = (wasserstein_alignment(&p, &q, n).unwrap(), wasserstein_alignment(&q, &p, n).unwrap());
        let (j1, j2) = (jsd_alignment(&p, &q).unwrap(), jsd_alignment(&q, &p).unwrap());
        prop_assert!((w1 - w2).abs() <= 1e-12);
        prop_assert!((j1 - j2).abs() <= 1e-12);
        for s in [w1, j1] {
            prop_assert!((0.0..=1.0).contains(&s));
        }
        prop_assert!((wasserstein_alignment(&p, &p, n).unwrap() - 1.0).abs() <= 1e-9);
        prop_assert!((jsd_alignment(&p, &p).unwrap() - 1.0).abs() <= 1e-9);
        let max_gap = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if max_gap > 1e-6 {
            prop_assert!(w1 < 1.0 && j1 < 1.0);
        }
    }

    #[test]
    fn nothing_is_farther_from_uniform_than_a_point_mass(p in prop::collection::vec(0.0f64..1.0, 2..8)) {
        let s: f64 = p.iter().sum();
        prop_assume!(s > 0.0);
        let p: Vec<f64> = p.iter().map(|v| v / s).collect();
        let n = p.len();
        let uniform = vec![1.0 / n as f64; n];
        let mut point = vec![0.0; n];
        point[0] = 1.0;
        prop_assert!(jsd_alignment(&p, &uniform).unwrap() >= jsd_alignment(&point, &uniform).unwrap() - 1e-12);
    }
}

#[test]
fn ordinal_mapping_reorders_options() {
    // Options listed out of order: ordinals say option 0 is "3rd", etc.
    let a = Distribution::new(vec![1.0, 0.0, 0.0]).unwrap().with_ordinals(vec![3, 1, 2]).unwrap();
    let b = Distribution::new(vec![0.0, 1.0, 0.0]).unwrap().with_ordinals(vec![3, 1, 2]).unwrap();
    assert_eq!(similarity(Metric::Wasserstein, &a, &b).unwrap(), 0.0);
    let c = Distribution::new(vec![0.0, 0.0, 1.0]).unwrap().with_ordinals(vec![3, 1, 2]).unwrap();
    assert_eq!(similarity(Metric::Wasserstein, &a, &c).unwrap(), 0.5);
    let plain = Distribution::new(vec![0.5, 0.5]).unwrap();
    assert!(similarity(Metric::Wasserstein, &plain, &plain).is_err());
    assert!(Distribution::new(vec![0.5, 0.6]).is_err());
}

#[test]
fn alignment_score_is_the_question_mean() {
    let d = |v: &[f64]| Distribution::new(v.to_vec()).unwrap().with_ordinals((1..=v.len() as u32).collect()).unwrap();
    let mut preds = BTreeMap::new();
    let mut truths = BTreeMap::new();
    // 0.2: WD 0.8 over N=2.  0.8: WD 0.2 over N=2.
    preds.insert("a".to_string(), d(&[1.0, 0.0]));
    truths.insert("a".to_string(), d(&[0.2, 0.8]));
    preds.insert("b".to_string(), d(&[0.5, 0.5]));
    truths.insert("b".to_string(), d(&[0.7, 0.3]));
    let s = alignment_score(&preds, &truths, Metric::Wasserstein).unwrap();
    assert!((s.per_question[0].1 - 0.2).abs() < 1e-12);
    assert!((s.per_question[1].1 - 0.8).abs() < 1e-12);
    assert!((s.mean - 0.5).abs() < 1e-12);

    let one: BTreeMap<_, _> = truths.iter().take(1).map(|(k, v)| (k.clone(), v.clone())).collect();
    assert_eq!(alignment_score(&one, &one, Metric::Jsd).unwrap().mean, 1.0);
    assert!(alignment_score(&one, &truths, Metric::Jsd).is_err());
    assert!(alignment_score(&BTreeMap::new(), &BTreeMap::new(), Metric::Jsd).is_err());
}
