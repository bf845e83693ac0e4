//! The encoding–disentanglement–reverse pipeline: encode a sentence through
//! the flow, split the latent into content and style rows, synthesize a
//! target-style vector with conditional layer norm, splice it at the style
//! positions, and run the flow inverse back to embedding space.
//!
//! Reconstruction paths invert with the recorded forward partitions (exact);
//! the transfer path re-scores the fused latent at each inverse layer, since
//! no forward partition exists for a latent that was never produced by a
//! forward pass.

use std::path::Path;

use crate::data::{StyleId, TokenSequence, Vocabulary};
use crate::error::{Error, Result};
use crate::flow::{FlowPass, InverseSplits, LatentState, LayerSplit, Partition};
use crate::model::{ClnMode, Model, SplitScorer};
use crate::optim::TapeBind;
use crate::scorer::{attention_split, embed_with, TokenScorer, UniformScorer};
use crate::tape::{Checks, Tape, TensorId};
use crate::tensor::Tensor;

static UNIFORM: UniformScorer = UniformScorer;

impl Model {
    /// The scorer that drives coupling splits and disentanglement.
    pub fn splitter(&self) -> &dyn TokenScorer {
        match self.config.split_scorer {
            SplitScorer::Trained => &self.scorer,
            SplitScorer::Uniform => &UNIFORM,
        }
    }
}

/// Everything one forward encode leaves on the tape.
pub struct EncodedOnTape {
    pub z: TensorId,
    pub logdet: TensorId,
    pub splits: Vec<LayerSplit>,
    /// Disentanglement split of the final latent.
    pub partition: Partition,
}

/// Embedding rows of a token sequence as a tape constant (the table is
/// frozen). Unknown ids are a vocabulary error.
pub fn embed_on_tape(tape: &mut Tape, model: &Model, seq: &TokenSequence) -> Result<TensorId> {
    let rows = embed_with(&model.embedding, seq)?;
    tape.leaf(&rows)
}

/// Chain forward plus the disentanglement split of the resulting latent.
///
/// The disentanglement positions are scored on the input token rows, not on
/// the transformed latent: the scorer was trained on embeddings, and the
/// flow never permutes rows, so token-level style salience carries over to
/// the latent positions one-to-one. (`disentangle` exposes the
/// latent-scoring path.)
pub fn encode_on_tape(
    tape: &mut Tape,
    bind: &mut TapeBind,
    model: &Model,
    rows: TensorId,
) -> Result<EncodedOnTape> {
    let input_rows = tape.value(rows);
    let pass: FlowPass = model
        .chain
        .forward(tape, bind, &model.store, rows, model.splitter())?;
    let weights = model.splitter().weights(&input_rows);
    let partition = attention_split(&weights, model.chain.rho, None)?;
    Ok(EncodedOnTape {
        z: pass.output,
        logdet: pass.logdet,
        splits: pass.splits,
        partition,
    })
}

/// Conditional layer norm: standardize the content rows per token, apply the
/// target style's gain and bias, then reduce to one row per style position.
pub fn cln_on_tape(
    tape: &mut Tape,
    bind: &mut TapeBind,
    model: &Model,
    z_content: TensorId,
    style: usize,
    style_positions: &[usize],
) -> Result<TensorId> {
    let (gamma, beta) = model.style_table.pair(style)?;
    let normed = crate::block::normalize_rows(tape, z_content, model.config.cln_eps)?;
    let g = bind.leaf(tape, &model.store, gamma)?;
    let b = bind.leaf(tape, &model.store, beta)?;
    let scaled = tape.mul(normed, g)?;
    let styled = tape.add(scaled, b)?;
    let n_content = tape.shape(styled)[0];
    match model.config.cln_mode {
        ClnMode::RowSelect => {
            let idx: Vec<usize> = style_positions.iter().map(|&p| p % n_content).collect();
            tape.gather_rows(styled, &idx)
        }
        ClnMode::MeanPool => {
            let ones = tape.constant(
                vec![1.0 / n_content as f64; n_content],
                vec![1, n_content],
            )?;
            let pooled = tape.matmul(ones, styled)?;
            tape.gather_rows(pooled, &vec![0; style_positions.len()])
        }
    }
}

/// Splice content rows and style rows back into their original positions.
pub fn fuse_on_tape(
    tape: &mut Tape,
    z_content: TensorId,
    z_style: TensorId,
    partition: &Partition,
    rows: usize,
) -> Result<TensorId> {
    if tape.shape(z_style)[0] != partition.style.len() {
        return Err(Error::contract(format!(
            "fuse: {} style rows for {} style positions",
            tape.shape(z_style)[0],
            partition.style.len()
        )));
    }
    tape.scatter_rows(
        &[
            (&partition.content, z_content),
            (&partition.style, z_style),
        ],
        rows,
    )
}

// ── Inference-level ops ────────────────────────────────────────────────

/// Encode a sentence into a `LatentState` snapshot (no gradients).
pub fn encode(model: &Model, seq: &TokenSequence) -> Result<LatentState> {
    let mut tape = Tape::new(Checks::On);
    let mut bind = TapeBind::new();
    let rows = embed_on_tape(&mut tape, model, seq)?;
    let enc = encode_on_tape(&mut tape, &mut bind, model, rows)?;
    Ok(LatentState {
        values: tape.value(enc.z),
        logdet: Some(tape.data(enc.logdet)[0]),
        splits: enc.splits,
        partition: enc.partition,
    })
}

/// Split a latent into content rows and style rows, re-scoring the latent
/// itself. Updates the stored partition and returns `(z_c, z_s, partition)`.
pub fn disentangle(
    z: &mut LatentState,
    scorer: &dyn TokenScorer,
    rho: f64,
) -> Result<(Tensor, Tensor, Partition)> {
    let weights = scorer.weights(&z.values);
    let partition = attention_split(&weights, rho, None)?;
    z.partition = partition.clone();
    let (_, d) = z.values.dims();
    let gather = |idx: &[usize]| -> Tensor {
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(z.values.row(i));
        }
        Tensor::new(data, vec![idx.len(), d]).expect("gather shape")
    };
    Ok((gather(&partition.content), gather(&partition.style), partition))
}

/// Nearest-neighbor decode: each row maps to the vocabulary id with minimal
/// Euclidean distance; ties go to the smaller id.
pub fn decode_tokens(rows: &Tensor, table: &Tensor) -> Vec<u32> {
    let (n, d) = rows.dims();
    let (v, dt) = table.dims();
    debug_assert_eq!(d, dt);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let row = rows.row(i);
        let mut best = 0u32;
        let mut best_dist = f64::INFINITY;
        for id in 0..v {
            let e = table.row(id);
            let mut dist = 0.0;
            for (a, b) in row.iter().zip(e) {
                let diff = a - b;
                dist += diff * diff;
            }
            if dist < best_dist {
                best_dist = dist;
                best = id as u32;
            }
        }
        out.push(best);
    }
    out
}

/// Smallest pairwise distance between distinct embedding rows; perturbations
/// below half of it cannot change any nearest-neighbor decode.
pub fn min_embedding_gap(table: &Tensor) -> f64 {
    let (v, d) = table.dims();
    let mut min = f64::INFINITY;
    for i in 0..v {
        for j in i + 1..v {
            let mut dist = 0.0;
            for k in 0..d {
                let diff = table.data[i * d + k] - table.data[j * d + k];
                dist += diff * diff;
            }
            min = min.min(dist.sqrt());
        }
    }
    min
}

/// Where the replacement style rows come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StyleSource {
    /// Conditional-layer-norm vector for the given style id.
    Cln(usize),
    /// Keep the original style rows (exact round trip).
    Original,
}

/// Full pipeline record: every intermediate needed to audit or invert one
/// transfer.
#[derive(Debug, Clone)]
pub struct TransferRecord {
    pub source: TokenSequence,
    pub source_style: StyleId,
    pub target_style: StyleId,
    pub latent: LatentState,
    pub fused: Tensor,
    pub output_embeddings: Tensor,
    pub output: TokenSequence,
}

fn run_pipeline(
    model: &Model,
    seq: &TokenSequence,
    style_source: StyleSource,
    rescore_inverse: bool,
    target_style: StyleId,
) -> Result<TransferRecord> {
    if target_style.0 >= model.style_count() {
        return Err(Error::contract(format!(
            "target style {} not in model's {} styles",
            target_style.0,
            model.style_count()
        )));
    }
    let mut tape = Tape::new(Checks::On);
    let mut bind = TapeBind::new();
    let rows = embed_on_tape(&mut tape, model, seq)?;
    let n_rows = tape.shape(rows)[0];
    let enc = encode_on_tape(&mut tape, &mut bind, model, rows)?;

    let z_content = tape.gather_rows(enc.z, &enc.partition.content)?;
    let z_style_new = match style_source {
        StyleSource::Cln(style) => {
            cln_on_tape(&mut tape, &mut bind, model, z_content, style, &enc.partition.style)?
        }
        StyleSource::Original => tape.gather_rows(enc.z, &enc.partition.style)?,
    };
    let fused = fuse_on_tape(&mut tape, z_content, z_style_new, &enc.partition, n_rows)?;

    let inv = if rescore_inverse {
        model.chain.inverse(
            &mut tape,
            &mut bind,
            &model.store,
            fused,
            InverseSplits::Rescored(model.splitter()),
        )?
    } else {
        model.chain.inverse(
            &mut tape,
            &mut bind,
            &model.store,
            fused,
            InverseSplits::Recorded(&enc.splits),
        )?
    };

    let output_embeddings = tape.value(inv.output);
    let ids = decode_tokens(&output_embeddings, &model.embedding);
    let output = TokenSequence {
        mask: vec![true; ids.len()],
        ids,
        label: target_style,
    };
    Ok(TransferRecord {
        source: seq.clone(),
        source_style: seq.label,
        target_style,
        latent: LatentState {
            values: tape.value(enc.z),
            logdet: Some(tape.data(enc.logdet)[0]),
            splits: enc.splits,
            partition: enc.partition,
        },
        fused: tape.value(fused),
        output_embeddings,
        output,
    })
}

/// Transfer a sentence to the target style (CLN style vector, re-scored
/// inverse splits).
pub fn transfer(model: &Model, seq: &TokenSequence, target_style: StyleId) -> Result<TransferRecord> {
    run_pipeline(model, seq, StyleSource::Cln(target_style.0), true, target_style)
}

/// Same-style reconstruction through the CLN path (the self-reconstruction
/// objective at inference).
pub fn self_reconstruct(model: &Model, seq: &TokenSequence) -> Result<TransferRecord> {
    run_pipeline(model, seq, StyleSource::Cln(seq.label.0), false, seq.label)
}

/// Exact round trip: disentangle, fuse the original style rows back, invert
/// with the recorded partitions. Token-identical by construction.
pub fn reconstruct_exact(model: &Model, seq: &TokenSequence) -> Result<TransferRecord> {
    run_pipeline(model, seq, StyleSource::Original, false, seq.label)
}

/// Write transfer results in the output schema:
/// `source_label<TAB>target_label<TAB>source_sentence<TAB>output_sentence`.
pub fn write_transfer_output(
    path: &Path,
    records: &[TransferRecord],
    vocab: &Vocabulary,
) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            r.source_style.0,
            r.target_style.0,
            r.source.text(vocab)?,
            r.output.text(vocab)?
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Parsed row of a transfer output file.
#[derive(Debug, Clone)]
pub struct TransferLine {
    pub source_label: StyleId,
    pub target_label: StyleId,
    pub source_sentence: String,
    pub output_sentence: String,
}

pub fn read_transfer_output(path: &Path) -> Result<Vec<TransferLine>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut lines = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.splitn(4, '\t').collect();
        if parts.len() != 4 {
            return Err(Error::Data(format!(
                "line {}: expected 4 tab-separated fields",
                i + 1
            )));
        }
        let parse = |s: &str| -> Result<StyleId> {
            s.parse::<usize>()
                .map(StyleId)
                .map_err(|_| Error::Data(format!("line {}: bad label {s:?}", i + 1)))
        };
        lines.push(TransferLine {
            source_label: parse(parts[0])?,
            target_label: parse(parts[1])?,
            source_sentence: parts[2].to_string(),
            output_sentence: parts[3].to_string(),
        });
    }
    if lines.is_empty() {
        return Err(Error::Data("transfer output file has no rows".to_string()));
    }
    Ok(lines)
}
