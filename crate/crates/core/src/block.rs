//! Single-layer Transformer block: multi-head self-attention plus a
//! feed-forward sublayer, each with residual connection and layer norm, and
//! an output head that emits a (scale, shift) pair per token — twice the
//! input width.
//!
//! The attention accepts a key-visibility mask so the block can be made a
//! function of the content tokens only, which is what keeps the coupling
//! layers exactly invertible.

use crate::error::{Error, Result};
use crate::optim::{ParamId, ParamStore, TapeBind};
use crate::rng::SeedRng;
use crate::tape::{Tape, TensorId};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-6;
const MASK_NEG: f64 = -1e9;

#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub in_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub ff_dim: usize,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln1_gain: ParamId,
    ln1_bias: ParamId,
    ff_w1: ParamId,
    ff_b1: ParamId,
    ff_w2: ParamId,
    ff_b2: ParamId,
    ln2_gain: ParamId,
    ln2_bias: ParamId,
    head_w: ParamId,
    head_b: ParamId,
}

fn glorot(store: &mut ParamStore, name: String, rows: usize, cols: usize, rng: &mut SeedRng) -> ParamId {
    let std = (2.0 / (rows + cols) as f64).sqrt();
    store.add(name, Tensor::randn(vec![rows, cols], std, rng).with_grad())
}

fn zeros_vec(store: &mut ParamStore, name: String, n: usize) -> ParamId {
    store.add(name, Tensor::zeros(vec![n]).with_grad())
}

fn ones_vec(store: &mut ParamStore, name: String, n: usize) -> ParamId {
    store.add(
        name,
        Tensor::new(vec![1.0; n], vec![n]).unwrap().with_grad(),
    )
}

impl TransformerBlock {
    /// The output head starts near zero so a fresh coupling layer is close
    /// to the identity map.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        heads: usize,
        ff_dim: usize,
        rng: &mut SeedRng,
    ) -> Result<TransformerBlock> {
        if in_dim == 0 || heads == 0 || in_dim % heads != 0 {
            return Err(Error::Config(format!(
                "block dim {in_dim} not divisible into {heads} heads"
            )));
        }
        let d = in_dim;
        let p = |s: &str| format!("{prefix}.{s}");
        Ok(TransformerBlock {
            in_dim,
            heads,
            head_dim: d / heads,
            ff_dim,
            wq: glorot(store, p("attn.wq"), d, d, rng),
            bq: zeros_vec(store, p("attn.bq"), d),
            wk: glorot(store, p("attn.wk"), d, d, rng),
            bk: zeros_vec(store, p("attn.bk"), d),
            wv: glorot(store, p("attn.wv"), d, d, rng),
            bv: zeros_vec(store, p("attn.bv"), d),
            wo: glorot(store, p("attn.wo"), d, d, rng),
            bo: zeros_vec(store, p("attn.bo"), d),
            ln1_gain: ones_vec(store, p("ln1.gain"), d),
            ln1_bias: zeros_vec(store, p("ln1.bias"), d),
            ff_w1: glorot(store, p("ff.w1"), d, ff_dim, rng),
            ff_b1: zeros_vec(store, p("ff.b1"), ff_dim),
            ff_w2: glorot(store, p("ff.w2"), ff_dim, d, rng),
            ff_b2: zeros_vec(store, p("ff.b2"), d),
            ln2_gain: ones_vec(store, p("ln2.gain"), d),
            ln2_bias: zeros_vec(store, p("ln2.bias"), d),
            head_w: {
                let std = 1e-3;
                store.add(
                    p("head.w"),
                    Tensor::randn(vec![d, 2 * d], std, rng).with_grad(),
                )
            },
            head_b: zeros_vec(store, p("head.b"), 2 * d),
        })
    }

    /// `[L, in_dim] → [L, 2·in_dim]`. `visible[j] = false` hides token j from
    /// every attention query; at least one key must stay visible.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bind: &mut TapeBind,
        store: &ParamStore,
        x: TensorId,
        visible: Option<&[bool]>,
    ) -> Result<TensorId> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.in_dim {
            return Err(Error::Shape {
                op: "transformer-block",
                lhs: shape,
                rhs: vec![0, self.in_dim],
            });
        }
        let rows = shape[0];
        if let Some(v) = visible {
            if v.len() != rows || !v.iter().any(|&b| b) {
                return Err(Error::contract(
                    "transformer-block: mask must match rows and keep a visible key",
                ));
            }
        }

        let pe = tape.constant(positional_encoding(rows, self.in_dim), vec![rows, self.in_dim])?;
        let inp = tape.add(x, pe)?;

        // Multi-head attention.
        let q = self.project(tape, bind, store, inp, self.wq, self.bq)?;
        let k = self.project(tape, bind, store, inp, self.wk, self.bk)?;
        let v = self.project(tape, bind, store, inp, self.wv, self.bv)?;
        let mask = match visible {
            Some(vis) => {
                let row: Vec<f64> = vis
                    .iter()
                    .map(|&b| if b { 0.0 } else { MASK_NEG })
                    .collect();
                Some(tape.constant(row, vec![rows])?)
            }
            None => None,
        };
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut ctx = None;
        for h in 0..self.heads {
            let lo = h * self.head_dim;
            let hi = lo + self.head_dim;
            let qh = tape.slice_cols(q, lo, hi)?;
            let kh = tape.slice_cols(k, lo, hi)?;
            let vh = tape.slice_cols(v, lo, hi)?;
            let mut scores = tape.matmul_tb(qh, kh)?;
            scores = tape.scale(scores, scale)?;
            if let Some(m) = mask {
                scores = tape.add(scores, m)?;
            }
            let attn = tape.softmax_last(scores)?;
            let ch = tape.matmul(attn, vh)?;
            ctx = Some(match ctx {
                None => ch,
                Some(acc) => tape.concat(acc, ch, 1)?,
            });
        }
        let ctx = ctx.expect("heads >= 1");
        let attn_out = self.project(tape, bind, store, ctx, self.wo, self.bo)?;

        let res1 = tape.add(inp, attn_out)?;
        let h1 = self.layer_norm(tape, bind, store, res1, self.ln1_gain, self.ln1_bias)?;

        let ff = self.project(tape, bind, store, h1, self.ff_w1, self.ff_b1)?;
        let ff = tape.tanh(ff)?;
        let ff = self.project(tape, bind, store, ff, self.ff_w2, self.ff_b2)?;

        let res2 = tape.add(h1, ff)?;
        let h2 = self.layer_norm(tape, bind, store, res2, self.ln2_gain, self.ln2_bias)?;

        self.project(tape, bind, store, h2, self.head_w, self.head_b)
    }

    fn project(
        &self,
        tape: &mut Tape,
        bind: &mut TapeBind,
        store: &ParamStore,
        x: TensorId,
        w: ParamId,
        b: ParamId,
    ) -> Result<TensorId> {
        let wi = bind.leaf(tape, store, w)?;
        let bi = bind.leaf(tape, store, b)?;
        let y = tape.matmul(x, wi)?;
        tape.add(y, bi)
    }

    fn layer_norm(
        &self,
        tape: &mut Tape,
        bind: &mut TapeBind,
        store: &ParamStore,
        x: TensorId,
        gain: ParamId,
        bias: ParamId,
    ) -> Result<TensorId> {
        let normed = normalize_rows(tape, x, LAYER_NORM_EPS)?;
        let g = bind.leaf(tape, store, gain)?;
        let b = bind.leaf(tape, store, bias)?;
        let scaled = tape.mul(normed, g)?;
        tape.add(scaled, b)
    }
}

/// Per-row standardization `(x − μ)/√(σ² + ε)` over the channel axis.
pub fn normalize_rows(tape: &mut Tape, x: TensorId, eps: f64) -> Result<TensorId> {
    let mu = tape.mean_last(x)?;
    let centered = tape.sub(x, mu)?;
    let var = tape.var_last(x)?;
    let var_eps = tape.add_const(var, eps)?;
    let sd = tape.sqrt(var_eps)?;
    tape.div(centered, sd)
}

/// Sinusoidal positional encoding, `[positions, dim]`.
pub fn positional_encoding(positions: usize, dim: usize) -> Vec<f64> {
    let mut pe = vec![0.0; positions * dim];
    for p in 0..positions {
        for j in 0..dim {
            let pair = (j - j % 2) as f64;
            let rate = (10_000.0_f64).powf(pair / dim as f64);
            let angle = p as f64 / rate;
            pe[p * dim + j] = if j % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}
