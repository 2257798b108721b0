use gpo::baselines::{uniform_predict, UniformBaseline};
use gpo::data::{split_context_target, GroupDataset, SplitSpec};
use gpo::metrics::{jsd_alignment, Metric};
use gpo::model::{pack_blocks, predict_preferences, GpoModel, ModelConfig};
use gpo::par::Execution;
use gpo::synth::{generate_world, SynthSpec};
use gpo::train::{entropy_floor, evaluate_groups, evaluate_groups_with, meta_train, TrainConfig};
use gpo::Error;

const DIM: usize = 8;

fn world(groups: usize, questions: usize, seed: u64) -> Vec<GroupDataset> {
    let mut g = generate_world(&SynthSpec::new(groups.max(3), questions, 3, DIM, 0.5, seed)).unwrap().1;
    g.truncate(groups);
    g
}

fn small_model(seed: u64) -> GpoModel {
    GpoModel::init(ModelConfig {
        d_model: 16,
        n_layers: 2,
        n_heads: 2,
        d_ff: 32,
        seed,
        ..ModelConfig::new(DIM)
    })
    .unwrap()
}

fn quick(steps: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        max_steps: steps,
        eval_interval: 10,
        patience: 1000,
        val_seeds: vec![0],
        ..TrainConfig::default()
    }
}

fn mean_ce(model: &GpoModel, group: &GroupDataset, mq: usize, seeds: std::ops::Range<u64>) -> (f64, f64) {
    let (mut ce, mut floor, mut n) = (0.0, 0.0, 0.0);
    for seed in seeds {
        let s = split_context_target(group, SplitSpec { context_questions: mq, seed }).unwrap();
        let seq = pack_blocks(DIM, &s.context_pairs(), &s.target_blocks()).unwrap();
        ce += model.loss(&seq, &s.target_preferences()).unwrap();
        floor += entropy_floor(s.targets.iter().map(|q| q.preferences.as_slice()));
        n += 1.0;
    }
    (ce / n, floor / n)
}

#[test]
fn zero_steps_is_identity() {
    let g = world(2, 6, 1);
    let model = small_model(0);
    let (out, h) = meta_train(model.clone(), &g[..1], &g[1..], &quick(0)).unwrap();
    assert_eq!(out, model);
    assert!(h.losses.is_empty() && h.evals.is_empty());
}

#[test]
fn same_seed_same_history() {
    let g = world(3, 8, 2);
    let run = || meta_train(small_model(3), &g[..2], &g[2..], &quick(25)).unwrap();
    let (m1, h1) = run();
    let (m2, h2) = run();
    assert_eq!(h1, h2);
    assert_eq!(m1.to_bytes().unwrap(), m2.to_bytes().unwrap());
    let (_, h3) = meta_train(small_model(3), &g[..2], &g[2..], &TrainConfig { seed: 9, ..quick(25) }).unwrap();
    assert_ne!(h1.losses, h3.losses);
}

#[test]
fn first_loss_is_log_options() {
    // Zero output head: every target is predicted uniform over 3 options.
    let g = world(2, 6, 3);
    let (_, h) = meta_train(small_model(0), &g[..1], &g[1..], &quick(1)).unwrap();
    assert!((h.losses[0] - 3f64.ln()).abs() < 1e-5, "{}", h.losses[0]);
}

#[test]
fn overfits_a_single_group() {
    let g = world(1, 10, 4);
    let cfg = TrainConfig {
        context_range: Some([1, 1]),
        max_steps: 500,
        eval_interval: 50,
        ..quick(500)
    };
    let (model, _) = meta_train(small_model(1), &g, &g, &cfg).unwrap();
    let (ce, floor) = mean_ce(&model, &g[0], 1, 0..10);
    assert!(ce - floor <= 0.05, "ce {ce} floor {floor}");

    let s = split_context_target(&g[0], SplitSpec { context_questions: 1, seed: 0 }).unwrap();
    let preds = predict_preferences(&model, &s.context_pairs(), &s.target_blocks()).unwrap();
    let tv: f64 = preds
        .iter()
        .zip(&s.targets)
        .map(|(p, q)| 0.5 * p.iter().zip(&q.preferences).map(|(a, b)| (a - b).abs()).sum::<f64>())
        .sum::<f64>()
        / preds.len() as f64;
    assert!(tv < 0.05, "mean total variation {tv}");
}

#[test]
fn training_beats_the_untrained_model() {
    let g = world(6, 12, 5);
    let untrained = small_model(2);
    let (trained, h) = meta_train(untrained.clone(), &g[..4], &g[4..], &quick(300)).unwrap();
    assert!(h.best_alignment.unwrap() >= h.evals[0].alignment);
    let before = evaluate_groups(&untrained, &g[4..], 5, &[10, 11, 12], Metric::Jsd).unwrap();
    let after = evaluate_groups(&trained, &g[4..], 5, &[10, 11, 12], Metric::Jsd).unwrap();
    for (a, b) in after.seed_means.iter().zip(&before.seed_means) {
        assert!(a > b, "trained {a} untrained {b}");
    }
}

#[test]
fn only_training_groups_are_trained_on() {
    let g = world(5, 6, 6);
    let (_, h) = meta_train(small_model(0), &g[..3], &g[3..], &quick(40)).unwrap();
    let train_ids: Vec<&str> = g[..3].iter().map(|d| d.group_id.as_str()).collect();
    assert!(!h.trained_groups.is_empty());
    assert!(h.trained_groups.iter().all(|id| train_ids.contains(&id.as_str())));
}

#[test]
fn early_stopping_and_checkpoint_selection() {
    let g = world(3, 8, 7);
    let cfg = TrainConfig { patience: 1, eval_interval: 5, ..quick(400) };
    let (_, h) = meta_train(small_model(0), &g[..2], &g[2..], &cfg).unwrap();
    let best = h.evals.iter().map(|e| e.alignment).fold(f64::MIN, f64::max);
    assert_eq!(h.best_alignment, Some(best));
    let at_best = h.evals.iter().find(|e| e.step == h.best_step).unwrap();
    assert_eq!(at_best.alignment, best);
    if h.stopped_early {
        assert!(h.losses.len() < 400);
    }
}

#[test]
fn configuration_errors() {
    let g = world(2, 6, 8);
    let other = generate_world(&SynthSpec::new(3, 6, 3, DIM + 1, 0.5, 0)).unwrap().1;
    assert!(matches!(meta_train(small_model(0), &other, &g, &quick(5)), Err(Error::Validation(_))));
    assert!(matches!(meta_train(small_model(0), &[], &g, &quick(5)), Err(Error::Validation(_))));
    assert!(matches!(meta_train(small_model(0), &g, &[], &quick(5)), Err(Error::Validation(_))));
    let bad = TrainConfig { context_range: Some([7, 9]), ..quick(5) };
    assert!(matches!(meta_train(small_model(0), &g, &g, &bad), Err(Error::Validation(_))));
    let bad = TrainConfig { context_range: Some([3, 2]), ..quick(5) };
    assert!(bad.validate().is_err());
    assert_eq!(TrainConfig { context_range: Some([2, 100]), ..quick(5) }.range_for(6).unwrap(), (2, 5));
    assert_eq!(TrainConfig::wide_context().context_range, Some([10, 100]));
}

#[test]
fn evaluation_errors() {
    let g = world(2, 6, 9);
    for m in [0, 6] {
        assert!(evaluate_groups(&UniformBaseline, &g, m, &[0], Metric::Jsd).is_err());
    }
    assert!(evaluate_groups(&UniformBaseline, &g, 2, &[], Metric::Jsd).is_err());
    let err = evaluate_groups(&UniformBaseline, &g, 2, &[0], Metric::Wasserstein).unwrap_err();
    assert!(err.to_string().contains("q000"), "{err}");
}

#[test]
fn uniform_report_matches_direct_scores() {
    let g = world(3, 7, 10);
    let seeds = [4, 5, 6];
    let r = evaluate_groups(&UniformBaseline, &g, 3, &seeds, Metric::Jsd).unwrap();
    assert_eq!(r.method, "uniform");
    assert_eq!(r.seed_means.len(), 3);
    assert_eq!(r.cells.len(), 9);
    for (s, seed) in seeds.iter().enumerate() {
        let mut per_group = Vec::new();
        for ds in &g {
            let split = split_context_target(ds, SplitSpec { context_questions: 3, seed: *seed }).unwrap();
            let scores: Vec<f64> = split
                .targets
                .iter()
                .map(|q| jsd_alignment(&uniform_predict(q.n_options()).unwrap(), &q.preferences).unwrap())
                .collect();
            per_group.push(scores.iter().sum::<f64>() / scores.len() as f64);
        }
        let want = per_group.iter().sum::<f64>() / per_group.len() as f64;
        assert!((r.seed_means[s] - want).abs() < 1e-12);
    }
    let m = r.seed_means.iter().sum::<f64>() / 3.0;
    let var = r.seed_means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 2.0;
    assert!((r.mean - m).abs() < 1e-12);
    assert!((r.std - var.sqrt()).abs() < 1e-12);
}

#[test]
fn parallel_evaluation_is_bit_identical() {
    let g = world(4, 8, 11);
    let config = ModelConfig { zero_output_head: false, ..small_model(0).config };
    let model: GpoModel = GpoModel::init(config).unwrap();
    let a = evaluate_groups_with(Execution::Sequential, &model, &g, 3, &[1, 2], Metric::Jsd).unwrap();
    let b = evaluate_groups_with(Execution::Parallel, &model, &g, 3, &[1, 2], Metric::Jsd).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
}
