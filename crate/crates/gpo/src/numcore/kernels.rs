//! Tape-free numeric kernels over row-major slices.
//!
//! Every reduction runs left to right over its index, and parallel variants
//! split work by output row only, so a given output element is produced by the
//! same operation sequence no matter how many threads run.

use super::{BoolMatrix, Scalar};
use crate::error::{dim_err, Error, Result};
use crate::par::{self, Execution};

/// Below this many multiply-adds a matmul stays on the calling thread.
const PAR_MIN_WORK: usize = 1 << 16;

fn exec_for(work: usize) -> Execution {
    if work >= PAR_MIN_WORK {
        Execution::default()
    } else {
        Execution::Sequential
    }
}

fn rows_per_chunk(rows: usize) -> usize {
    rows.div_ceil(par::threads().max(1) * 4).max(1)
}

/// `a[m×k] · b[k×n]`.
pub fn matmul<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    matmul_with(exec_for(m * k * n), a, b, m, k, n)
}

pub fn matmul_with<S: Scalar>(
    exec: Execution,
    a: &[S],
    b: &[S],
    m: usize,
    k: usize,
    n: usize,
) -> Vec<S> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![S::zero(); m * n];
    if n == 0 {
        return c;
    }
    let chunk = rows_per_chunk(m);
    par::for_each_chunk_mut(exec, &mut c, chunk * n, |ci, rows| {
        for (r, crow) in rows.chunks_mut(n).enumerate() {
            let i = ci * chunk + r;
            let arow = &a[i * k..(i + 1) * k];
            for (p, &aik) in arow.iter().enumerate() {
                let brow = &b[p * n..(p + 1) * n];
                for (cj, &bj) in crow.iter_mut().zip(brow) {
                    *cj = *cj + aik * bj;
                }
            }
        }
    });
    c
}

/// `a[m×k] · b[n×k]ᵀ`.
pub fn matmul_bt<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut c = vec![S::zero(); m * n];
    if n == 0 {
        return c;
    }
    let chunk = rows_per_chunk(m);
    par::for_each_chunk_mut(exec_for(m * k * n), &mut c, chunk * n, |ci, rows| {
        for (r, crow) in rows.chunks_mut(n).enumerate() {
            let i = ci * chunk + r;
            let arow = &a[i * k..(i + 1) * k];
            for (j, cj) in crow.iter_mut().enumerate() {
                *cj = dot(arow, &b[j * k..(j + 1) * k]);
            }
        }
    });
    c
}

/// `a[k×m]ᵀ · b[k×n]`.
pub fn matmul_at<S: Scalar>(a: &[S], b: &[S], k: usize, m: usize, n: usize) -> Vec<S> {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![S::zero(); m * n];
    if n == 0 {
        return c;
    }
    let chunk = rows_per_chunk(m);
    par::for_each_chunk_mut(exec_for(m * k * n), &mut c, chunk * n, |ci, rows| {
        for (r, crow) in rows.chunks_mut(n).enumerate() {
            let i = ci * chunk + r;
            for p in 0..k {
                let api = a[p * m + i];
                let brow = &b[p * n..(p + 1) * n];
                for (cj, &bj) in crow.iter_mut().zip(brow) {
                    *cj = *cj + api * bj;
                }
            }
        }
    });
    c
}

pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter()
        .zip(b)
        .fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

/// In-place max-subtracted softmax of one slice.
pub fn softmax_in_place<S: Scalar>(row: &mut [S]) {
    let mx = row.iter().fold(S::neg_infinity(), |m, &x| m.max(x));
    let mut sum = S::zero();
    for x in row.iter_mut() {
        *x = (*x - mx).exp();
        sum = sum + *x;
    }
    for x in row.iter_mut() {
        *x = *x / sum;
    }
}

/// Softmax along `axis` of a tensor with the given shape.
pub fn softmax_axis<S: Scalar>(data: &[S], shape: &[usize], axis: usize) -> Result<Vec<S>> {
    let (outer, len, inner) = axis_split(shape, axis)?;
    let mut out = data.to_vec();
    let mut buf = vec![S::zero(); len];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            for (j, b) in buf.iter_mut().enumerate() {
                *b = data[base + j * inner];
            }
            softmax_in_place(&mut buf);
            for (j, &b) in buf.iter().enumerate() {
                out[base + j * inner] = b;
            }
        }
    }
    Ok(out)
}

/// `(outer, len, inner)` strides for reducing along `axis`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return dim_err(format!("axis {axis} out of range for shape {shape:?}"));
    }
    let len = shape[axis];
    if len == 0 {
        return dim_err(format!("empty slice along axis {axis} of shape {shape:?}"));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, len, inner))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// GELU, tanh approximation.
pub fn gelu<S: Scalar>(x: S) -> S {
    let c = S::of(GELU_C);
    let a = S::of(GELU_A);
    let half = S::of(0.5);
    half * x * (S::one() + (c * (x + a * x * x * x)).tanh())
}

pub fn gelu_grad<S: Scalar>(x: S) -> S {
    let c = S::of(GELU_C);
    let a = S::of(GELU_A);
    let half = S::of(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (S::one() + t) + half * x * (S::one() - t * t) * c * (S::one() + S::of(3.0) * a * x * x)
}

/// Output of [`layer_norm`]: the affine result plus what backward needs.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormOut<S> {
    pub out: Vec<S>,
    pub xhat: Vec<S>,
    pub rstd: Vec<S>,
}

/// Normalizes each length-`d` row to zero mean and unit variance, then
/// scales by `gamma` and shifts by `beta`.
pub fn layer_norm<S: Scalar>(x: &[S], d: usize, gamma: &[S], beta: &[S], eps: S) -> LayerNormOut<S> {
    let rows = x.len() / d;
    let dn = S::of(d as f64);
    let mut out = vec![S::zero(); x.len()];
    let mut xhat = vec![S::zero(); x.len()];
    let mut rstd = vec![S::zero(); rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().fold(S::zero(), |a, &v| a + v) / dn;
        let var = row.iter().fold(S::zero(), |a, &v| a + (v - mean) * (v - mean)) / dn;
        let rs = S::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (row[j] - mean) * rs;
            xhat[r * d + j] = h;
            out[r * d + j] = h * gamma[j] + beta[j];
        }
    }
    LayerNormOut { out, xhat, rstd }
}

/// Per-head attention result; `probs` is dense `[h][n][n]` with exact zeros
/// at masked positions.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionOut<S> {
    pub out: Vec<S>,
    pub probs: Vec<S>,
}

/// Scaled dot-product attention over `[heads × n × dh]` inputs.
///
/// Disallowed positions are skipped entirely, so they get weight exactly
/// zero and their values never enter the weighted sum.
pub fn masked_attention<S: Scalar>(
    q: &[S],
    k: &[S],
    v: &[S],
    heads: usize,
    n: usize,
    dh: usize,
    mask: &BoolMatrix,
) -> Result<AttentionOut<S>> {
    if mask.size() != n {
        return dim_err(format!("mask is {0}×{0} but sequence has {n} tokens", mask.size()));
    }
    let allowed: Vec<Vec<usize>> = (0..n).map(|i| mask.allowed(i)).collect();
    if let Some(row) = allowed.iter().position(|a| a.is_empty()) {
        return Err(Error::Contract(format!("attention mask row {row} allows no positions")));
    }
    let scale = S::one() / S::of(dh as f64).sqrt();
    let head_ids: Vec<usize> = (0..heads).collect();
    let exec = exec_for(heads * n * n * dh);
    let per_head = par::map(exec, &head_ids, |&h| {
        let off = h * n * dh;
        let (qh, kh, vh) = (&q[off..off + n * dh], &k[off..off + n * dh], &v[off..off + n * dh]);
        let mut out = vec![S::zero(); n * dh];
        let mut probs = vec![S::zero(); n * n];
        let mut w = Vec::with_capacity(n);
        for i in 0..n {
            let qi = &qh[i * dh..(i + 1) * dh];
            w.clear();
            w.extend(allowed[i].iter().map(|&j| dot(qi, &kh[j * dh..(j + 1) * dh]) * scale));
            softmax_in_place(&mut w);
            let orow = &mut out[i * dh..(i + 1) * dh];
            for (&j, &p) in allowed[i].iter().zip(&w) {
                probs[i * n + j] = p;
                for (o, &vv) in orow.iter_mut().zip(&vh[j * dh..(j + 1) * dh]) {
                    *o = *o + p * vv;
                }
            }
        }
        (out, probs)
    });
    let mut out = Vec::with_capacity(heads * n * dh);
    let mut probs = Vec::with_capacity(heads * n * n);
    for (o, p) in per_head {
        out.extend(o);
        probs.extend(p);
    }
    Ok(AttentionOut { out, probs })
}

/// Gradients of [`masked_attention`] with respect to `q`, `k`, `v`.
#[allow(clippy::too_many_arguments)]
pub fn masked_attention_backward<S: Scalar>(
    q: &[S],
    k: &[S],
    v: &[S],
    probs: &[S],
    dout: &[S],
    heads: usize,
    n: usize,
    dh: usize,
    mask: &BoolMatrix,
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let allowed: Vec<Vec<usize>> = (0..n).map(|i| mask.allowed(i)).collect();
    let scale = S::one() / S::of(dh as f64).sqrt();
    let head_ids: Vec<usize> = (0..heads).collect();
    let exec = exec_for(heads * n * n * dh);
    let per_head = par::map(exec, &head_ids, |&h| {
        let off = h * n * dh;
        let (qh, kh, vh) = (&q[off..off + n * dh], &k[off..off + n * dh], &v[off..off + n * dh]);
        let doh = &dout[off..off + n * dh];
        let ph = &probs[h * n * n..(h + 1) * n * n];
        let mut dq = vec![S::zero(); n * dh];
        let mut dk = vec![S::zero(); n * dh];
        let mut dv = vec![S::zero(); n * dh];
        let mut dp = Vec::with_capacity(n);
        for i in 0..n {
            let doi = &doh[i * dh..(i + 1) * dh];
            dp.clear();
            let mut c = S::zero();
            for &j in &allowed[i] {
                let p = ph[i * n + j];
                let d = dot(doi, &vh[j * dh..(j + 1) * dh]);
                c = c + p * d;
                dp.push(d);
                for (g, &o) in dv[j * dh..(j + 1) * dh].iter_mut().zip(doi) {
                    *g = *g + p * o;
                }
            }
            let qi = &qh[i * dh..(i + 1) * dh];
            for (&j, &d) in allowed[i].iter().zip(&dp) {
                let ds = ph[i * n + j] * (d - c) * scale;
                let kj = &kh[j * dh..(j + 1) * dh];
                for (g, &kk) in dq[i * dh..(i + 1) * dh].iter_mut().zip(kj) {
                    *g = *g + ds * kk;
                }
                for (g, &qq) in dk[j * dh..(j + 1) * dh].iter_mut().zip(qi) {
                    *g = *g + ds * qq;
                }
            }
        }
        (dq, dk, dv)
    });
    let mut dq = Vec::with_capacity(heads * n * dh);
    let mut dk = Vec::with_capacity(heads * n * dh);
    let mut dv = Vec::with_capacity(heads * n * dh);
    for (a, b, c) in per_head {
        dq.extend(a);
        dk.extend(b);
        dv.extend(c);
    }
    (dq, dk, dv)
}
