//! The in-context preference transformer.
//!
//! Each token is one viewpoint embedding concatenated with its preference
//! score (context) or a zero placeholder (target). Tokens carry no position,
//! and the attention mask lets a target see only the context and itself, so
//! a target's score depends on the context set and its own embedding alone.

mod config;
mod io;
mod mask;
mod pack;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{Mode, ModelConfig};
pub use io::{FORMAT_VERSION, MAGIC};
pub use mask::{build_mask, AttentionMaskSpec};
pub use pack::{pack_sequence, ContextPair, PackedSequence, TargetToken};

use crate::error::{validation_err, Result};
use crate::numcore::{kernels, Scalar, Tape, Tensor, Var};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Xavier { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
}

/// Name, shape and initializer of one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Parameter tensors in their fixed storage order.
///
/// The order is: input projector layers (weight, bias), then per block
/// `ln1`, attention `q,k,v,o` projections, `ln2`, the two feed-forward
/// layers, then the final layer norm and the output head.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    let linear = |specs: &mut Vec<ParamSpec>, name: &str, fan_in: usize, fan_out: usize, zero: bool| {
        let init = if zero {
            Init::Zeros
        } else {
            Init::Xavier { fan_in, fan_out }
        };
        specs.push(ParamSpec {
            name: format!("{name}.weight"),
            shape: vec![fan_in, fan_out],
            init,
        });
        specs.push(ParamSpec {
            name: format!("{name}.bias"),
            shape: vec![fan_out],
            init: Init::Zeros,
        });
    };
    let norm = |specs: &mut Vec<ParamSpec>, name: &str, d: usize| {
        specs.push(ParamSpec {
            name: format!("{name}.gamma"),
            shape: vec![d],
            init: Init::Ones,
        });
        specs.push(ParamSpec {
            name: format!("{name}.beta"),
            shape: vec![d],
            init: Init::Zeros,
        });
    };
    let d = cfg.d_model;
    for l in 0..cfg.input_projector_depth {
        let fan_in = if l == 0 { cfg.token_width() } else { d };
        linear(&mut specs, &format!("projector.{l}"), fan_in, d, false);
    }
    for b in 0..cfg.n_layers {
        norm(&mut specs, &format!("blocks.{b}.ln1"), d);
        for p in ["q", "k", "v", "o"] {
            linear(&mut specs, &format!("blocks.{b}.attn.{p}"), d, d, false);
        }
        norm(&mut specs, &format!("blocks.{b}.ln2"), d);
        linear(&mut specs, &format!("blocks.{b}.ffn.0"), d, cfg.d_ff, false);
        linear(&mut specs, &format!("blocks.{b}.ffn.1"), cfg.d_ff, d, false);
    }
    norm(&mut specs, "final_ln", d);
    linear(&mut specs, "head", d, 1, cfg.zero_output_head);
    specs
}

/// Parameters plus architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct GpoModel<S = f32> {
    pub config: ModelConfig,
    pub params: Vec<Tensor<S>>,
}

/// Tape handles from one recorded forward pass.
pub struct ForwardPass {
    pub params: Vec<Var>,
    /// Raw score per target token, shape `[n_targets]`.
    pub scores: Var,
}

impl<S: Scalar> GpoModel<S> {
    /// Xavier-uniform weights from the config seed; zero biases, unit norms.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = param_specs(&config)
            .into_iter()
            .map(|spec| {
                let n = spec.len();
                let data = match spec.init {
                    Init::Zeros => vec![S::zero(); n],
                    Init::Ones => vec![S::one(); n],
                    Init::Xavier { fan_in, fan_out } => {
                        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                        (0..n).map(|_| S::of(rng.random_range(-a..a))).collect()
                    }
                };
                Tensor::new(spec.shape, data).expect("spec shape")
            })
            .collect();
        Ok(GpoModel { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn cast<T: Scalar>(&self) -> GpoModel<T> {
        GpoModel {
            config: self.config.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    /// Records the forward pass on `tape`. Parameters become trainable
    /// leaves when `trainable` is set, constants otherwise.
    pub fn forward_on_tape(&self, tape: &mut Tape<S>, seq: &PackedSequence, trainable: bool) -> Result<ForwardPass> {
        let cfg = &self.config;
        if seq.width != cfg.token_width() {
            return validation_err(format!(
                "packed tokens have width {}, model expects {}",
                seq.width,
                cfg.token_width()
            ));
        }
        let n = seq.len();
        let mask = build_mask(seq.m, n, cfg.mode)?.to_shared();
        let params: Vec<Var> = self
            .params
            .iter()
            .map(|p| if trainable { tape.param(p.clone()) } else { tape.constant(p.clone()) })
            .collect();
        let mut next = params.iter().copied();
        let mut take = || next.next().expect("parameter layout matches specs");

        let mut h = tape.constant(Tensor::from_f64([n, seq.width], &seq.tokens)?);
        for l in 0..cfg.input_projector_depth {
            let (w, b) = (take(), take());
            let z = tape.matmul(h, w)?;
            h = tape.add_row(z, b)?;
            if l + 1 < cfg.input_projector_depth {
                h = tape.gelu(h);
            }
        }
        if cfg.mode == Mode::CausalAblation {
            let pe = tape.constant(sinusoidal_positions(n, cfg.d_model));
            h = tape.add(h, pe)?;
        }
        let eps = S::of(LN_EPS);
        for _ in 0..cfg.n_layers {
            let (g1, b1) = (take(), take());
            let a = tape.layer_norm(h, g1, b1, eps)?;
            let mut qkv = [a; 3];
            for slot in qkv.iter_mut() {
                let (w, b) = (take(), take());
                let z = tape.matmul(a, w)?;
                let z = tape.add_row(z, b)?;
                *slot = tape.split_heads(z, cfg.n_heads)?;
            }
            let [q, k, v] = qkv;
            let att = tape.masked_attention(q, k, v, mask.clone())?;
            let att = tape.merge_heads(att)?;
            let (wo, bo) = (take(), take());
            let att = tape.matmul(att, wo)?;
            let att = tape.add_row(att, bo)?;
            h = tape.add(h, att)?;
            let (g2, b2) = (take(), take());
            let f = tape.layer_norm(h, g2, b2, eps)?;
            let (w1, c1) = (take(), take());
            let f = tape.matmul(f, w1)?;
            let f = tape.add_row(f, c1)?;
            let f = tape.gelu(f);
            let (w2, c2) = (take(), take());
            let f = tape.matmul(f, w2)?;
            let f = tape.add_row(f, c2)?;
            h = tape.add(h, f)?;
        }
        let (gf, bf) = (take(), take());
        h = tape.layer_norm(h, gf, bf, eps)?;
        let t = tape.select_rows(h, (seq.m..n).collect())?;
        let (wh, bh) = (take(), take());
        let s = tape.matmul(t, wh)?;
        let s = tape.add_row(s, bh)?;
        let scores = tape.reshape(s, [n - seq.m])?;
        Ok(ForwardPass { params, scores })
    }
}

/// Standard sine/cosine position table, `[n × d]`.
pub fn sinusoidal_positions<S: Scalar>(n: usize, d: usize) -> Tensor<S> {
    let mut data = vec![S::zero(); n * d];
    for pos in 0..n {
        for i in 0..d {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
            data[pos * d + i] = S::of(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::new([n, d], data).expect("table shape")
}

impl<S: Scalar> GpoModel<S> {
    /// Raw score per target token.
    pub fn forward(&self, seq: &PackedSequence) -> Result<Vec<S>> {
        let mut tape = Tape::new();
        let pass = self.forward_on_tape(&mut tape, seq, false)?;
        Ok(tape.value(pass.scores).data().to_vec())
    }

    /// Per-question cross-entropy of the target blocks and its gradient for
    /// every parameter, in storage order.
    pub fn loss_and_grads(&self, seq: &PackedSequence, targets: &[f64]) -> Result<(f64, Vec<Tensor<S>>)> {
        let mut tape = Tape::new();
        let pass = self.forward_on_tape(&mut tape, seq, true)?;
        let y: Vec<S> = targets.iter().map(|&v| S::of(v)).collect();
        let loss = tape.grouped_cross_entropy(pass.scores, &seq.blocks, &y)?;
        let value = tape.value(loss).data()[0].f64();
        let grads = tape.backward(loss)?;
        let grads = pass
            .params
            .iter()
            .zip(&self.params)
            .map(|(&v, p)| grads.get_or_zeros(v, p))
            .collect();
        Ok((value, grads))
    }

    /// Per-question loss without gradients.
    pub fn loss(&self, seq: &PackedSequence, targets: &[f64]) -> Result<f64> {
        let mut tape = Tape::new();
        let pass = self.forward_on_tape(&mut tape, seq, false)?;
        let y: Vec<S> = targets.iter().map(|&v| S::of(v)).collect();
        let loss = tape.grouped_cross_entropy(pass.scores, &seq.blocks, &y)?;
        Ok(tape.value(loss).data()[0].f64())
    }
}

/// Packs whole question blocks as targets, numbering blocks in order.
pub fn pack_blocks(d_embed: usize, context: &[ContextPair], blocks: &[&[Vec<f32>]]) -> Result<PackedSequence> {
    let targets: Vec<TargetToken> = blocks
        .iter()
        .enumerate()
        .flat_map(|(b, xs)| xs.iter().map(move |x| TargetToken { x: x.clone(), block: b }))
        .collect();
    pack_sequence(d_embed, context, &targets)
}

/// Predicted distribution for every question block: a softmax over the
/// block's raw viewpoint scores.
pub fn predict_preferences<S: Scalar>(
    model: &GpoModel<S>,
    context: &[ContextPair],
    blocks: &[&[Vec<f32>]],
) -> Result<Vec<Vec<f64>>> {
    if let Some(i) = blocks.iter().position(|b| b.len() < 2) {
        return validation_err(format!(
            "question block {i} has {} viewpoints; at least 2 are required",
            blocks[i].len()
        ));
    }
    let seq = pack_blocks(model.config.d_embed, context, blocks)?;
    let scores = model.forward(&seq)?;
    Ok(seq
        .blocks
        .iter()
        .map(|r| {
            let mut p: Vec<f64> = scores[r.clone()].iter().map(|s| s.f64()).collect();
            kernels::softmax_in_place(&mut p);
            p
        })
        .collect())
}
