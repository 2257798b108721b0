//! Central finite-difference checks (h = 1e-3, f64) for every differentiable
//! tape operation and for a whole tiny transformer.
//!
//! Derivatives use the fourth-order central stencil
//! `(−f(x+2h) + 8f(x+h) − 8f(x−h) + f(x−2h)) / 12h`. The two-point stencil's
//! O(h²) truncation error alone exceeds 1e-4 on some parameters of the tiny
//! transformer.
#![allow(dead_code)]

use std::ops::Range;
use std::sync::Arc;

use gpo::model::{pack_sequence, ContextPair, GpoModel, Mode, ModelConfig, TargetToken};
use gpo::numcore::{BoolMatrix, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-3;
pub const TOL: f64 = 1e-4;
pub const SEEDS: u64 = 10;

/// Fourth-order central difference of `f` along one coordinate.
pub fn central(h: f64, f: impl Fn(f64) -> f64) -> f64 {
    (-f(2.0 * h) + 8.0 * f(h) - 8.0 * f(-h) + f(-2.0 * h)) / (12.0 * h)
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Builds the graph from `inputs` (all trainable) and reduces it to a scalar
/// with a fixed random weighting when the output is not already scalar.
fn scalar_loss<F>(tape: &mut Tape<f64>, inputs: &[Tensor<f64>], build: &F) -> (Vec<Var>, Var)
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(tape, &vars);
    if tape.value(out).is_scalar() {
        return (vars, out);
    }
    let shape = tape.value(out).shape().to_vec();
    let w = rand_tensor(&mut ChaCha8Rng::seed_from_u64(99), &shape);
    let w = tape.constant(w);
    let prod = tape.mul(out, w).unwrap();
    (vars, tape.sum(prod))
}

/// Norm-wise relative error. The floor keeps structurally zero gradients
/// (e.g. the key bias, which softmax cancels) from dividing noise by noise.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / (na + nb).max(1e-8)
}

/// Worst relative error over all inputs between tape and numeric gradients.
fn check<F>(inputs: Vec<Tensor<f64>>, build: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let (vars, loss) = scalar_loss(&mut tape, &inputs, &build);
    let grads = tape.backward(loss).unwrap();
    let eval = |inputs: &[Tensor<f64>]| {
        let mut t = Tape::new();
        let (_, l) = scalar_loss(&mut t, inputs, &build);
        t.value(l).data()[0]
    };
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*v, &inputs[i]).into_data();
        let mut numeric = vec![0.0; inputs[i].len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            *slot = central(H, |d| {
                let mut shifted = inputs.clone();
                shifted[i].data_mut()[j] += d;
                eval(&shifted)
            });
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

/// Worst relative error of each differentiable op on one random instance.
pub fn op_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let rng = &mut ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    out.push(("matmul", check(vec![rand_tensor(rng, &[3, 4]), rand_tensor(rng, &[4, 2])], |t, v| {
        t.matmul(v[0], v[1]).unwrap()
    })));
    out.push(("add", check(vec![rand_tensor(rng, &[2, 3]), rand_tensor(rng, &[2, 3])], |t, v| {
        t.add(v[0], v[1]).unwrap()
    })));
    out.push(("add_row", check(vec![rand_tensor(rng, &[3, 4]), rand_tensor(rng, &[4])], |t, v| {
        t.add_row(v[0], v[1]).unwrap()
    })));
    out.push(("mul", check(vec![rand_tensor(rng, &[5]), rand_tensor(rng, &[5])], |t, v| t.mul(v[0], v[1]).unwrap())));
    out.push(("scale", check(vec![rand_tensor(rng, &[2, 2])], |t, v| t.scale(v[0], -1.7))));
    out.push(("fan_out", check(vec![rand_tensor(rng, &[3, 3])], |t, v| {
        let sq = t.matmul(v[0], v[0]).unwrap();
        t.add(sq, v[0]).unwrap()
    })));
    out.push(("gelu", check(vec![rand_tensor(rng, &[4, 3])], |t, v| {
        let x = t.scale(v[0], 3.0);
        t.gelu(x)
    })));
    out.push((
        "layer_norm",
        check(vec![rand_tensor(rng, &[3, 5]), rand_tensor(rng, &[5]), rand_tensor(rng, &[5])], |t, v| {
            t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap()
        }),
    ));
    out.push(("softmax_last", check(vec![rand_tensor(rng, &[3, 4])], |t, v| t.softmax(v[0], 1).unwrap())));
    out.push(("softmax_first", check(vec![rand_tensor(rng, &[3, 4])], |t, v| t.softmax(v[0], 0).unwrap())));
    out.push(("split_merge", check(vec![rand_tensor(rng, &[3, 4])], |t, v| {
        let s = t.split_heads(v[0], 2).unwrap();
        let w = t.constant(Tensor::full([2, 3, 2], 0.5));
        let s = t.mul(s, w).unwrap();
        t.merge_heads(s).unwrap()
    })));
    out.push(("select_rows", check(vec![rand_tensor(rng, &[4, 2])], |t, v| {
        t.select_rows(v[0], vec![3, 1, 3]).unwrap()
    })));
    out.push(("reshape_sum", check(vec![rand_tensor(rng, &[2, 3])], |t, v| {
        let r = t.reshape(v[0], [6]).unwrap();
        let sq = t.mul(r, r).unwrap();
        t.sum(sq)
    })));
    let n = 5;
    let mask = Arc::new(BoolMatrix::from_fn(n, |i, j| j < 2 || i == j));
    let qkv = vec![rand_tensor(rng, &[2, n, 3]), rand_tensor(rng, &[2, n, 3]), rand_tensor(rng, &[2, n, 3])];
    out.push(("attention", check(qkv, move |t, v| t.masked_attention(v[0], v[1], v[2], mask.clone()).unwrap())));
    let target: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
    out.push(("mse", check(vec![rand_tensor(rng, &[6])], move |t, v| t.mse(v[0], &target).unwrap())));
    let blocks: Vec<Range<usize>> = vec![0..3, 3..5, 5..9];
    let mut y = vec![0.0; 9];
    for b in &blocks {
        let raw: Vec<f64> = b.clone().map(|_| rng.random_range(0.0..1.0)).collect();
        let s: f64 = raw.iter().sum();
        for (i, r) in b.clone().zip(raw) {
            y[i] = r / s;
        }
    }
    out.push(("grouped_ce", check(vec![rand_tensor(rng, &[9])], move |t, v| {
        let x = t.scale(v[0], 4.0);
        t.grouped_cross_entropy(x, &blocks, &y).unwrap()
    })));
    out
}

/// Three context pairs and four targets in two blocks, `d_embed = 4`.
pub fn tiny_instance(rng: &mut ChaCha8Rng) -> (Vec<ContextPair>, Vec<TargetToken>, Vec<f64>) {
    let x = |rng: &mut ChaCha8Rng| (0..4).map(|_| rng.random_range(-1.0f32..1.0)).collect::<Vec<f32>>();
    let context = (0..3)
        .map(|_| ContextPair {
            x: x(rng),
            y: rng.random_range(0.0..1.0),
        })
        .collect();
    let targets = (0..4).map(|i| TargetToken { x: x(rng), block: i / 2 }).collect();
    let a: f64 = rng.random_range(0.05..0.95);
    let b: f64 = rng.random_range(0.05..0.95);
    (context, targets, vec![a, 1.0 - a, b, 1.0 - b])
}

pub fn tiny_config(seed: u64, mode: Mode) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        d_ff: 16,
        seed,
        mode,
        zero_output_head: false,
        ..ModelConfig::new(4)
    }
}

/// Freshly initialized tiny model with every parameter (norms and biases
/// included) nudged away from its trivial initial value.
pub fn perturbed_model(seed: u64, mode: Mode, rng: &mut ChaCha8Rng) -> GpoModel<f64> {
    let mut model: GpoModel<f64> = GpoModel::init(tiny_config(seed, mode)).unwrap();
    for p in model.params.iter_mut() {
        for v in p.data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    model
}

/// Relative error of each parameter tensor of the tiny model for one seed.
pub fn tiny_model_errors(mode: Mode, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let (context, targets, y) = tiny_instance(&mut rng);
    let seq = pack_sequence(4, &context, &targets).unwrap();
    let model = perturbed_model(seed, mode, &mut rng);
    let (_, grads) = model.loss_and_grads(&seq, &y).unwrap();
    grads
        .iter()
        .enumerate()
        .map(|(pi, g)| {
            let mut numeric = vec![0.0; g.len()];
            for (j, slot) in numeric.iter_mut().enumerate() {
                *slot = central(H, |d| {
                    let mut shifted = model.clone();
                    shifted.params[pi].data_mut()[j] += d;
                    shifted.loss(&seq, &y).unwrap()
                });
            }
            rel_err(g.data(), &numeric)
        })
        .collect()
}
