//! The four training objectives and their weighted total: self
//! reconstruction, cycle reconstruction, content consistency, and style
//! transfer, all assembled on one tape per sample.
//!
//! Reconstruction likelihoods use a tied-embedding softmax: per-token logits
//! are inner products of the predicted row with every vocabulary embedding,
//! times a learned sharpness scalar. No separate decoder network exists.

use crate::data::TokenSequence;
use crate::error::{Error, Result};
use crate::flow::InverseSplits;
use crate::model::Model;
use crate::optim::TapeBind;
use crate::scorer::nll_of_row;
use crate::tape::{Tape, TensorId};
use crate::tensor::Tensor;
use crate::transfer::{cln_on_tape, decode_tokens, embed_on_tape, encode_on_tape, fuse_on_tape};

/// λ₁..λ₄ weights of the total objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub self_w: f64,
    pub cycle_w: f64,
    pub content_w: f64,
    pub style_w: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            self_w: 0.5,
            cycle_w: 0.5,
            content_w: 1.0,
            style_w: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [
            ("self", self.self_w),
            ("cycle", self.cycle_w),
            ("content", self.content_w),
            ("style", self.style_w),
        ] {
            if w < 0.0 || !w.is_finite() {
                return Err(Error::Config(format!(
                    "loss weight {name} must be nonnegative, got {w}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub self_loss: f64,
    pub cycle_loss: f64,
    pub content_loss: f64,
    pub style_loss: f64,
    pub total: f64,
}

/// Weighted sum of already-evaluated components.
pub fn total_loss(
    self_loss: f64,
    cycle_loss: f64,
    content_loss: f64,
    style_loss: f64,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    weights.validate()?;
    Ok(LossBreakdown {
        self_loss,
        cycle_loss,
        content_loss,
        style_loss,
        total: weights.self_w * self_loss
            + weights.cycle_w * cycle_loss
            + weights.content_w * content_loss
            + weights.style_w * style_loss,
    })
}

/// Mean negative log-likelihood of the target ids under the tied-embedding
/// softmax of the predicted rows.
pub fn reconstruction_nll(
    tape: &mut Tape,
    embedding: &Tensor,
    logit_scale: Option<TensorId>,
    pred: TensorId,
    target_ids: &[u32],
) -> Result<TensorId> {
    let (rows, _) = {
        let s = tape.shape(pred);
        (s[0], s[1])
    };
    if rows != target_ids.len() {
        return Err(Error::contract(format!(
            "reconstruction nll: {rows} predicted rows for {} targets",
            target_ids.len()
        )));
    }
    let vocab = embedding.dims().0;
    for &id in target_ids {
        if id as usize >= vocab {
            return Err(Error::Vocab(format!(
                "target id {id} outside vocabulary of {vocab}"
            )));
        }
    }
    let table = tape.leaf(embedding)?;
    let mut logits = tape.matmul_tb(pred, table)?;
    if let Some(scale) = logit_scale {
        logits = tape.mul(logits, scale)?;
    }

    // Per-row max as a constant shift: log-softmax is exactly invariant to
    // it, gradients included.
    let shifts: Vec<f64> = (0..rows)
        .map(|i| {
            tape.data(logits)[i * vocab..(i + 1) * vocab]
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let shift = tape.constant(shifts, vec![rows, 1])?;
    let shifted = tape.sub(logits, shift)?;
    let e = tape.exp(shifted)?;
    let mean = tape.mean_last(e)?;
    let sum = tape.scale(mean, vocab as f64)?;
    let lse = tape.log(sum)?;
    let lsm = tape.sub(shifted, lse)?;

    let mut onehot = vec![0.0; rows * vocab];
    for (i, &id) in target_ids.iter().enumerate() {
        onehot[i * vocab + id as usize] = 1.0;
    }
    let t = tape.constant(onehot, vec![rows, vocab])?;
    let picked = tape.mul(t, lsm)?;
    let s = tape.sum_all(picked)?;
    tape.scale(s, -1.0 / rows as f64)
}

/// Mean squared L2 distance between two row sets of equal arity.
pub fn content_loss(tape: &mut Tape, a: TensorId, b: TensorId) -> Result<TensorId> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::contract(format!(
            "content loss: row sets {:?} vs {:?}",
            tape.shape(a),
            tape.shape(b)
        )));
    }
    let rows = tape.shape(a)[0];
    let d = tape.sub(a, b)?;
    let sq = tape.mul(d, d)?;
    let s = tape.sum_all(sq)?;
    tape.scale(s, 1.0 / rows as f64)
}

/// `−log p_C(target | embeddings)` through the frozen classifier's
/// differentiable path.
pub fn style_loss(
    tape: &mut Tape,
    model: &Model,
    embeddings: TensorId,
    target_style: usize,
) -> Result<TensorId> {
    // The classifier lives in its own store; give it its own bind.
    let mut scorer_bind = TapeBind::new();
    let logits = model.scorer.logits_on_tape(tape, &mut scorer_bind, embeddings)?;
    nll_of_row(tape, logits, target_style)
}

/// All four objectives of one training sample on one tape.
#[derive(Debug)]
pub struct SampleLosses {
    pub total: TensorId,
    pub breakdown: LossBreakdown,
}

pub fn total_loss_on_tape(
    tape: &mut Tape,
    bind: &mut TapeBind,
    model: &Model,
    seq: &TokenSequence,
    target_style: usize,
    weights: &LossWeights,
) -> Result<SampleLosses> {
    total_loss_on_tape_opts(tape, bind, model, seq, target_style, weights, false)
}

/// With `straight_through` set, the style loss sees the transferred rows
/// snapped to their nearest vocabulary embeddings (gradients pass straight
/// through the snap). The continuous path cannot feel the decode; the
/// snapped path scores the sentence that would actually be emitted.
pub fn total_loss_on_tape_opts(
    tape: &mut Tape,
    bind: &mut TapeBind,
    model: &Model,
    seq: &TokenSequence,
    target_style: usize,
    weights: &LossWeights,
    straight_through: bool,
) -> Result<SampleLosses> {
    weights.validate()?;
    if target_style == seq.label.0 {
        return Err(Error::contract(
            "cycle path needs a target style different from the source",
        ));
    }
    let rows = embed_on_tape(tape, model, seq)?;
    let n_rows = tape.shape(rows)[0];
    let enc = encode_on_tape(tape, bind, model, rows)?;
    let z_content = tape.gather_rows(enc.z, &enc.partition.content)?;

    // Self reconstruction: same-style CLN vector, recorded-split inverse.
    let self_style = cln_on_tape(tape, bind, model, z_content, seq.label.0, &enc.partition.style)?;
    let self_fused = fuse_on_tape(tape, z_content, self_style, &enc.partition, n_rows)?;
    let self_out = model.chain.inverse(
        tape,
        bind,
        &model.store,
        self_fused,
        InverseSplits::Recorded(&enc.splits),
    )?;
    let scale = bind.leaf(tape, &model.store, model.logit_scale)?;
    let self_nll = reconstruction_nll(tape, &model.embedding, Some(scale), self_out.output, &seq.ids)?;

    // Transfer: target-style CLN vector, re-scored inverse (continuous path).
    let tgt_style = cln_on_tape(tape, bind, model, z_content, target_style, &enc.partition.style)?;
    let tgt_fused = fuse_on_tape(tape, z_content, tgt_style, &enc.partition, n_rows)?;
    let transferred = model.chain.inverse(
        tape,
        bind,
        &model.store,
        tgt_fused,
        InverseSplits::Rescored(model.splitter()),
    )?;

    // Style: the transferred embeddings should classify as the target.
    let style_input = if straight_through {
        let rows = tape.value(transferred.output);
        let ids = decode_tokens(&rows, &model.embedding);
        let (n, d) = rows.dims();
        let mut delta = vec![0.0; n * d];
        for (i, &id) in ids.iter().enumerate() {
            let e = model.embedding.row(id as usize);
            for j in 0..d {
                delta[i * d + j] = e[j] - rows.data[i * d + j];
            }
        }
        let shift = tape.constant(delta, vec![n, d])?;
        tape.add(transferred.output, shift)?
    } else {
        transferred.output
    };
    let style = style_loss(tape, model, style_input, target_style)?;

    // Re-encode the transferred embeddings.
    let enc2 = encode_on_tape(tape, bind, model, transferred.output)?;

    // Content: the re-encoded latent's rows at the source content positions
    // should match the source content rows.
    let z2_at_source = tape.gather_rows(enc2.z, &enc.partition.content)?;
    let content = content_loss(tape, z_content, z2_at_source)?;

    // Cycle: push the transferred latent back to the source style and
    // reconstruct the original sentence.
    let z2_content = tape.gather_rows(enc2.z, &enc2.partition.content)?;
    let back_style = cln_on_tape(tape, bind, model, z2_content, seq.label.0, &enc2.partition.style)?;
    let back_fused = fuse_on_tape(tape, z2_content, back_style, &enc2.partition, n_rows)?;
    let back = model.chain.inverse(
        tape,
        bind,
        &model.store,
        back_fused,
        InverseSplits::Recorded(&enc2.splits),
    )?;
    let cycle_nll = reconstruction_nll(tape, &model.embedding, Some(scale), back.output, &seq.ids)?;

    // Weighted total, on tape so gradients see the weights.
    let sw = tape.scale(self_nll, weights.self_w)?;
    let cw = tape.scale(cycle_nll, weights.cycle_w)?;
    let ow = tape.scale(content, weights.content_w)?;
    let tw = tape.scale(style, weights.style_w)?;
    let mut total = tape.add(sw, cw)?;
    total = tape.add(total, ow)?;
    total = tape.add(total, tw)?;

    let breakdown = LossBreakdown {
        self_loss: tape.data(self_nll)[0],
        cycle_loss: tape.data(cycle_nll)[0],
        content_loss: tape.data(content)[0],
        style_loss: tape.data(style)[0],
        total: tape.data(total)[0],
    };
    Ok(SampleLosses { total, breakdown })
}
