//! Naive f64 reference implementations shared by integration tests.
#![allow(dead_code)]

use cled::minixformer::{
    relative_bucket, AttentionWeights, FeedForwardWeights, Matrix, MiniTransformer, TensorRef,
};
use rand::Rng;

pub fn tensor(model: &MiniTransformer, t: TensorRef) -> Vec<Vec<f64>> {
    model.params()[t.range()]
        .chunks(t.cols)
        .map(|r| r.iter().map(|&v| v as f64).collect())
        .collect()
}

fn to_f64(x: &Matrix) -> Vec<Vec<f64>> {
    (0..x.rows)
        .map(|r| x.row(r).iter().map(|&v| v as f64).collect())
        .collect()
}

/// `x W^T + b`
fn linear(x: &[Vec<f64>], w: &[Vec<f64>], b: Option<&[f64]>) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            w.iter()
                .enumerate()
                .map(|(o, wr)| {
                    let s: f64 = wr.iter().zip(row).map(|(a, b)| a * b).sum();
                    s + b.map_or(0.0, |b| b[o])
                })
                .collect()
        })
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

/// Textbook multi-head attention: per head, softmax(Q_h K_h^T + B) V_h, then
/// concatenation and the output map.
pub fn attention(
    model: &MiniTransformer,
    x: &Matrix,
    memory: &Matrix,
    attn: &AttentionWeights,
    causal: bool,
) -> Vec<Vec<f64>> {
    let h = model.config.num_heads;
    let dh = model.config.head_dim();
    let bias = |t: Option<TensorRef>| t.map(|t| tensor(model, t).concat());
    let (bq, bk, bv, bo) = (
        bias(attn.query_bias),
        bias(attn.key_bias),
        bias(attn.value_bias),
        bias(attn.output_bias),
    );
    let q = linear(&to_f64(x), &tensor(model, attn.query), bq.as_deref());
    let k = linear(&to_f64(memory), &tensor(model, attn.key), bk.as_deref());
    let v = linear(&to_f64(memory), &tensor(model, attn.value), bv.as_deref());
    let rel = attn.relative_bias.map(|t| tensor(model, t));
    let mut concat = vec![vec![0.0; h * dh]; x.rows];
    for head in 0..h {
        for i in 0..x.rows {
            let visible = if causal { i + 1 } else { memory.rows };
            let mut s: Vec<f64> = (0..visible)
                .map(|j| {
                    let dot: f64 = (0..dh).map(|d| q[i][head * dh + d] * k[j][head * dh + d]).sum();
                    dot + rel.as_ref().map_or(0.0, |r| r[head][relative_bucket(i, j)])
                })
                .collect();
            let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = s.iter().map(|v| (v - m).exp()).sum();
            for v in &mut s {
                *v = (*v - m).exp() / z;
            }
            for d in 0..dh {
                concat[i][head * dh + d] = (0..visible).map(|j| s[j] * v[j][head * dh + d]).sum();
            }
        }
    }
    linear(&concat, &tensor(model, attn.output), bo.as_deref())
}

pub fn feed_forward(model: &MiniTransformer, y: &Matrix, ff: &FeedForwardWeights) -> Vec<Vec<f64>> {
    let y = to_f64(y);
    let b_in = ff.b_in.map(|t| tensor(model, t).concat());
    let b_out = ff.b_out.map(|t| tensor(model, t).concat());
    let a = linear(&y, &tensor(model, ff.w_in), b_in.as_deref());
    match ff.w_out {
        None => {
            let g: Vec<Vec<f64>> = a.iter().map(|r| r.iter().map(|&v| gelu(v)).collect()).collect();
            linear(&g, &tensor(model, ff.w2), b_out.as_deref())
        }
        Some(w_out) => {
            let l = linear(&y, &tensor(model, ff.w2), None);
            let g: Vec<Vec<f64>> = a
                .iter()
                .zip(&l)
                .map(|(ar, lr)| ar.iter().zip(lr).map(|(&a, &l)| gelu(a) * l).collect())
                .collect();
            linear(&g, &tensor(model, w_out), None)
        }
    }
}

/// `max |got - want| / max |want|`
pub fn rel_error(got: &Matrix, want: &[Vec<f64>]) -> f64 {
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (r, row) in want.iter().enumerate() {
        for (c, w) in row.iter().enumerate() {
            num = num.max((got.get(r, c) as f64 - w).abs());
            den = den.max(w.abs());
        }
    }
    num / den
}

/// Unit-scale random rows, like layer-norm outputs.
pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-2.0f32..2.0)).collect();
    Matrix { rows, cols, data }
}

/// Inputs used by sweep tests: seeded token sequences of length 6 to 16.
pub fn toy_inputs(n: usize, seed: u64) -> Vec<Vec<u32>> {
    cled::campaign::random_inputs(n, 6, 16, 32, seed)
}
