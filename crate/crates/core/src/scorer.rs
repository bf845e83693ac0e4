//! Pre-trained bidirectional GRU classifier with attention pooling.
//!
//! Serves two roles: its attention weights score tokens for style salience
//! (driving the coupling-layer splits and disentanglement), and its softmax
//! head is the style classifier behind the style transfer loss. It is
//! trained once, then frozen.
//!
//! Attention scores come from the bidirectional states, but the pooled
//! vector fed to the classification head is the weighted sum of the raw
//! token embeddings. The head can only see what the attention points at,
//! so the weights are forced to localize the class evidence instead of
//! parking on an arbitrary position whose contextual state already encodes
//! the whole sentence.
//!
//! Two execution paths compute the same function: a plain f64 path used for
//! scoring and evaluation, and a tape path used where gradients must flow
//! (the style loss differentiates through the classifier into the
//! transferred embeddings).

use rand::Rng;

use crate::data::{Corpus, TokenSequence};
use crate::error::{Error, Result};
use crate::flow::Partition;
use crate::optim::{Adam, AdamConfig, ParamId, ParamStore, TapeBind};
use crate::rng::{seed_rng, SeedRng};
use crate::tape::{Checks, Tape, TensorId};
use crate::tensor::Tensor;

// ── Token scoring interface ────────────────────────────────────────────

/// Scores token rows for style salience. Weights are nonnegative and sum
/// to 1 over the sequence.
pub trait TokenScorer {
    fn weights(&self, rows: &Tensor) -> Vec<f64>;
}

/// Untrained fallback: every token weighs the same.
pub struct UniformScorer;

impl TokenScorer for UniformScorer {
    fn weights(&self, rows: &Tensor) -> Vec<f64> {
        let n = rows.dims().0;
        vec![1.0 / n as f64; n]
    }
}

/// Top-⌈ρ·n_active⌉ positions by weight become style; ties go to the
/// smaller index; inactive (padding) positions are always content.
pub fn attention_split(weights: &[f64], rho: f64, active: Option<&[bool]>) -> Result<Partition> {
    split_top_fraction(weights, rho, active, None)
}

/// Same rule, but ties between equal weights prefer positions whose parity
/// matches the layer depth, so an untrained uniform scorer still alternates
/// sides across the chain instead of pinning the leftmost tokens.
pub fn attention_split_for_layer(
    weights: &[f64],
    rho: f64,
    active: Option<&[bool]>,
    layer_index: usize,
) -> Result<Partition> {
    split_top_fraction(weights, rho, active, Some(layer_index))
}

fn split_top_fraction(
    weights: &[f64],
    rho: f64,
    active: Option<&[bool]>,
    layer_parity: Option<usize>,
) -> Result<Partition> {
    if !(0.0 < rho && rho < 1.0) {
        return Err(Error::contract(format!(
            "style fraction must be in (0,1), got {rho}"
        )));
    }
    let len = weights.len();
    let is_active = |i: usize| active.map_or(true, |m| m[i]);
    let n_active = (0..len).filter(|&i| is_active(i)).count();
    if n_active < 2 {
        return Err(Error::contract(format!(
            "attention split needs at least 2 active tokens, got {n_active}"
        )));
    }
    let k = ((rho * n_active as f64).ceil() as usize).clamp(1, n_active - 1);

    let mut order: Vec<usize> = (0..len).filter(|&i| is_active(i)).collect();
    order.sort_by(|&a, &b| {
        weights[b]
            .partial_cmp(&weights[a])
            .unwrap()
            .then_with(|| match layer_parity {
                Some(p) => (a % 2 != p % 2).cmp(&(b % 2 != p % 2)),
                None => std::cmp::Ordering::Equal,
            })
            .then(a.cmp(&b))
    });
    let mut style: Vec<usize> = order[..k].to_vec();
    style.sort_unstable();
    let style_set: Vec<bool> = {
        let mut s = vec![false; len];
        for &i in &style {
            s[i] = true;
        }
        s
    };
    let content: Vec<usize> = (0..len).filter(|&i| !style_set[i]).collect();
    Ok(Partition { content, style })
}

// ── GRU scorer ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
struct GruParams {
    w_r: ParamId,
    u_r: ParamId,
    b_r: ParamId,
    w_z: ParamId,
    u_z: ParamId,
    b_z: ParamId,
    w_c: ParamId,
    u_c: ParamId,
    b_c: ParamId,
}

#[derive(Debug, Clone)]
pub struct Scorer {
    store: ParamStore,
    pub embed_dim: usize,
    pub hidden: usize,
    pub styles: usize,
    pub vocab_len: usize,
    embedding: ParamId,
    fwd: GruParams,
    bwd: GruParams,
    attn_w: ParamId,
    attn_b: ParamId,
    attn_v: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

fn glorot(store: &mut ParamStore, name: String, r: usize, c: usize, rng: &mut SeedRng) -> ParamId {
    let std = (2.0 / (r + c) as f64).sqrt();
    store.add(name, Tensor::randn(vec![r, c], std, rng).with_grad())
}

fn gru_params(
    store: &mut ParamStore,
    prefix: &str,
    d: usize,
    h: usize,
    rng: &mut SeedRng,
) -> GruParams {
    let p = |s: &str| format!("{prefix}.{s}");
    GruParams {
        w_r: glorot(store, p("w_r"), d, h, rng),
        u_r: glorot(store, p("u_r"), h, h, rng),
        b_r: store.add(p("b_r"), Tensor::zeros(vec![h]).with_grad()),
        w_z: glorot(store, p("w_z"), d, h, rng),
        u_z: glorot(store, p("u_z"), h, h, rng),
        b_z: store.add(p("b_z"), Tensor::zeros(vec![h]).with_grad()),
        w_c: glorot(store, p("w_c"), d, h, rng),
        u_c: glorot(store, p("u_c"), h, h, rng),
        b_c: store.add(p("b_c"), Tensor::zeros(vec![h]).with_grad()),
    }
}

impl Scorer {
    pub fn new(
        vocab_len: usize,
        embed_dim: usize,
        hidden: usize,
        styles: usize,
        rng: &mut SeedRng,
    ) -> Scorer {
        let mut store = ParamStore::new();
        // Embedding rows live on the unit sphere (renormalized after every
        // update): class-salient rows then separate from untouched filler
        // rows by direction, and nearest-neighbor decode margins stay wide.
        let mut embedding_init = Tensor::randn(vec![vocab_len, embed_dim], 1.0, rng);
        normalize_rows_unit(&mut embedding_init);
        let embedding = store.add("embedding", embedding_init.with_grad());
        let fwd = gru_params(&mut store, "gru.fwd", embed_dim, hidden, rng);
        let bwd = gru_params(&mut store, "gru.bwd", embed_dim, hidden, rng);
        let attn_w = glorot(&mut store, "attn.w".into(), 2 * hidden, hidden, rng);
        let attn_b = store.add("attn.b", Tensor::zeros(vec![hidden]).with_grad());
        let attn_v = glorot(&mut store, "attn.v".into(), hidden, 1, rng);
        let out_w = glorot(&mut store, "out.w".into(), embed_dim, styles, rng);
        let out_b = store.add("out.b", Tensor::zeros(vec![styles]).with_grad());
        Scorer {
            store,
            embed_dim,
            hidden,
            styles,
            vocab_len,
            embedding,
            fwd,
            bwd,
            attn_w,
            attn_b,
            attn_v,
            out_w,
            out_b,
        }
    }

    pub fn param_store(&self) -> &ParamStore {
        &self.store
    }

    pub fn param_store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn freeze(&mut self) {
        self.store.freeze_all();
    }

    /// Detached copy of the embedding table, `[V, D]`.
    pub fn embedding_table(&self) -> Tensor {
        let mut t = self.store.get(self.embedding).clone();
        t.requires_grad = false;
        t.grad = None;
        t
    }

    /// Embed a token sequence into `[L, D]` rows (padding rows use the pad
    /// embedding). Unknown ids are a vocabulary error.
    pub fn embed(&self, seq: &TokenSequence) -> Result<Tensor> {
        embed_with(&self.embedding_table(), seq)
    }

    // ── Plain path ──────────────────────────────────────────────────────

    fn p(&self, id: ParamId) -> &Tensor {
        self.store.get(id)
    }

    /// One GRU step: `h' = (1−z)⊙h + z⊙c`.
    fn gru_step(&self, g: &GruParams, x: &[f64], h: &[f64]) -> Vec<f64> {
        let hsz = self.hidden;
        let mut r = matvec(&self.p(g.w_r).data, x, hsz);
        add_matvec(&mut r, &self.p(g.u_r).data, h, hsz);
        add_bias(&mut r, &self.p(g.b_r).data);
        sigmoid_inplace(&mut r);

        let mut z = matvec(&self.p(g.w_z).data, x, hsz);
        add_matvec(&mut z, &self.p(g.u_z).data, h, hsz);
        add_bias(&mut z, &self.p(g.b_z).data);
        sigmoid_inplace(&mut z);

        let rh: Vec<f64> = r.iter().zip(h).map(|(ri, hi)| ri * hi).collect();
        let mut c = matvec(&self.p(g.w_c).data, x, hsz);
        add_matvec(&mut c, &self.p(g.u_c).data, &rh, hsz);
        add_bias(&mut c, &self.p(g.b_c).data);
        tanh_inplace(&mut c);

        (0..hsz)
            .map(|i| (1.0 - z[i]) * h[i] + z[i] * c[i])
            .collect()
    }

    /// Bidirectional states `[L][2H]` over the given embedding rows.
    fn states(&self, rows: &[&[f64]]) -> Vec<Vec<f64>> {
        let n = rows.len();
        let mut fwd_states = Vec::with_capacity(n);
        let mut h = vec![0.0; self.hidden];
        for &x in rows {
            h = self.gru_step(&self.fwd, x, &h);
            fwd_states.push(h.clone());
        }
        let mut bwd_states = vec![Vec::new(); n];
        let mut h = vec![0.0; self.hidden];
        for (i, &x) in rows.iter().enumerate().rev() {
            h = self.gru_step(&self.bwd, x, &h);
            bwd_states[i] = h.clone();
        }
        fwd_states
            .into_iter()
            .zip(bwd_states)
            .map(|(f, b)| {
                let mut s = f;
                s.extend(b);
                s
            })
            .collect()
    }

    fn attention_scores(&self, states: &[Vec<f64>]) -> Vec<f64> {
        let a = self.hidden;
        states
            .iter()
            .map(|s| {
                let mut e = matvec(&self.p(self.attn_w).data, s, a);
                add_bias(&mut e, &self.p(self.attn_b).data);
                tanh_inplace(&mut e);
                let v = &self.p(self.attn_v).data;
                e.iter().zip(v).map(|(ei, vi)| ei * vi).sum()
            })
            .collect()
    }

    /// Attention weights over embedding rows, restricted to active
    /// positions; inactive positions get exactly 0.
    pub fn attention_weights_rows(&self, rows: &Tensor, active: Option<&[bool]>) -> Result<Vec<f64>> {
        let (n, d) = rows.dims();
        if d != self.embed_dim {
            return Err(Error::Shape {
                op: "score-tokens",
                lhs: rows.shape.clone(),
                rhs: vec![n, self.embed_dim],
            });
        }
        let active_idx: Vec<usize> =
            (0..n).filter(|&i| active.map_or(true, |m| m[i])).collect();
        if active_idx.is_empty() {
            return Err(Error::contract("score-tokens: no active tokens"));
        }
        let normalized = unit_rows(&active_idx, rows);
        let active_rows: Vec<&[f64]> = normalized.iter().map(|r| r.as_slice()).collect();
        let states = self.states(&active_rows);
        let scores = self.attention_scores(&states);
        let probs = softmax(&scores);
        let mut out = vec![0.0; n];
        for (w, &i) in probs.iter().zip(&active_idx) {
            out[i] = *w;
        }
        Ok(out)
    }

    /// Style probabilities from embedding rows (all positions active).
    pub fn classify_rows(&self, rows: &Tensor) -> Result<Vec<f64>> {
        self.classify_rows_masked(rows, None)
    }

    pub fn classify_rows_masked(&self, rows: &Tensor, active: Option<&[bool]>) -> Result<Vec<f64>> {
        let (n, d) = rows.dims();
        if d != self.embed_dim {
            return Err(Error::Shape {
                op: "classify",
                lhs: rows.shape.clone(),
                rhs: vec![n, self.embed_dim],
            });
        }
        let active_idx: Vec<usize> =
            (0..n).filter(|&i| active.map_or(true, |m| m[i])).collect();
        if active_idx.is_empty() {
            return Err(Error::contract("classify: no active tokens"));
        }
        let normalized = unit_rows(&active_idx, rows);
        let active_rows: Vec<&[f64]> = normalized.iter().map(|r| r.as_slice()).collect();
        let states = self.states(&active_rows);
        let weights = softmax(&self.attention_scores(&states));
        // Pool the raw embeddings, not the contextual states.
        let mut ctx = vec![0.0; self.embed_dim];
        for (w, e) in weights.iter().zip(&active_rows) {
            for (c, ei) in ctx.iter_mut().zip(*e) {
                *c += w * ei;
            }
        }
        let mut logits = matvec(&self.p(self.out_w).data, &ctx, self.styles);
        add_bias(&mut logits, &self.p(self.out_b).data);
        Ok(softmax(&logits))
    }

    /// Style probabilities for a discrete token sequence: embedding lookup
    /// followed by the same rows path.
    pub fn classify_tokens(&self, seq: &TokenSequence) -> Result<Vec<f64>> {
        let rows = self.embed(seq)?;
        self.classify_rows_masked(&rows, Some(&seq.mask))
    }

    pub fn predict_label(&self, seq: &TokenSequence) -> Result<usize> {
        let probs = self.classify_tokens(seq)?;
        Ok(argmax(&probs))
    }

    // ── Tape path ───────────────────────────────────────────────────────

    fn gru_step_tape(
        &self,
        tape: &mut Tape,
        bind: &mut TapeBind,
        g: &GruParams,
        x: TensorId,
        h: TensorId,
    ) -> Result<TensorId> {
        let gate = |tape: &mut Tape, bind: &mut TapeBind, w, u, b, x, h| -> Result<TensorId> {
            let wi = bind.leaf(tape, &self.store, w)?;
            let ui = bind.leaf(tape, &self.store, u)?;
            let bi = bind.leaf(tape, &self.store, b)?;
            let xw = tape.matmul(x, wi)?;
            let hu = tape.matmul(h, ui)?;
            let s = tape.add(xw, hu)?;
            tape.add(s, bi)
        };
        let r = gate(tape, bind, g.w_r, g.u_r, g.b_r, x, h)?;
        let r = tape.sigmoid(r)?;
        let z = gate(tape, bind, g.w_z, g.u_z, g.b_z, x, h)?;
        let z = tape.sigmoid(z)?;
        let rh = tape.mul(r, h)?;
        let c = gate(tape, bind, g.w_c, g.u_c, g.b_c, x, rh)?;
        let c = tape.tanh(c)?;
        let one_minus_z = tape.sub_from(1.0, z)?;
        let keep = tape.mul(one_minus_z, h)?;
        let update = tape.mul(z, c)?;
        tape.add(keep, update)
    }

    /// Style logits `[1, styles]` for embedding rows on the tape; the
    /// differentiable path behind the style loss.
    ///
    /// Inputs are projected row-wise onto the unit sphere first — the
    /// convention the embedding table itself lives on — so continuous rows
    /// cannot buy classifier confidence with norm alone.
    pub fn logits_on_tape(
        &self,
        tape: &mut Tape,
        bind: &mut TapeBind,
        rows: TensorId,
    ) -> Result<TensorId> {
        let rows = unit_rows_on_tape(tape, rows)?;
        let n = tape.shape(rows)[0];
        let zero_h = tape.constant(vec![0.0; self.hidden], vec![1, self.hidden])?;
        let mut fwd_states = Vec::with_capacity(n);
        let mut h = zero_h;
        for t in 0..n {
            let x = tape.slice_rows(rows, t, t + 1)?;
            h = self.gru_step_tape(tape, bind, &self.fwd, x, h)?;
            fwd_states.push(h);
        }
        let mut bwd_states = vec![None; n];
        let mut h = zero_h;
        for t in (0..n).rev() {
            let x = tape.slice_rows(rows, t, t + 1)?;
            h = self.gru_step_tape(tape, bind, &self.bwd, x, h)?;
            bwd_states[t] = Some(h);
        }
        let mut states = Vec::with_capacity(n);
        for t in 0..n {
            states.push(tape.concat(fwd_states[t], bwd_states[t].unwrap(), 1)?);
        }

        let wa = bind.leaf(tape, &self.store, self.attn_w)?;
        let ba = bind.leaf(tape, &self.store, self.attn_b)?;
        let va = bind.leaf(tape, &self.store, self.attn_v)?;
        let mut scores = None;
        for &s in &states {
            let e = tape.matmul(s, wa)?;
            let e = tape.add(e, ba)?;
            let e = tape.tanh(e)?;
            let sc = tape.matmul(e, va)?;
            scores = Some(match scores {
                None => sc,
                Some(acc) => tape.concat(acc, sc, 1)?,
            });
        }
        let weights = tape.softmax_last(scores.expect("n >= 1"))?;

        // Pool the raw embedding rows with the attention weights.
        let ctx = tape.matmul(weights, rows)?;
        let wo = bind.leaf(tape, &self.store, self.out_w)?;
        let bo = bind.leaf(tape, &self.store, self.out_b)?;
        let logits = tape.matmul(ctx, wo)?;
        tape.add(logits, bo)
    }
}

impl TokenScorer for Scorer {
    fn weights(&self, rows: &Tensor) -> Vec<f64> {
        self.attention_weights_rows(rows, None)
            .expect("scorer weights over full rows")
    }
}

/// Embedding lookup against an explicit table.
pub fn embed_with(table: &Tensor, seq: &TokenSequence) -> Result<Tensor> {
    let (v, d) = table.dims();
    let mut data = Vec::with_capacity(seq.len() * d);
    for &id in &seq.ids {
        if id as usize >= v {
            return Err(Error::Vocab(format!(
                "token id {id} outside embedding table of {v} rows"
            )));
        }
        data.extend_from_slice(table.row(id as usize));
    }
    Tensor::new(data, vec![seq.len(), d])
}

// ── Spec-level ops ─────────────────────────────────────────────────────

/// Per-token style-salience weights: length L, sum 1, padding gets 0.
pub fn score_tokens(seq: &TokenSequence, scorer: &Scorer) -> Result<Vec<f64>> {
    if seq.is_empty() {
        return Err(Error::contract("score-tokens: empty sequence"));
    }
    let rows = scorer.embed(seq)?;
    scorer.attention_weights_rows(&rows, Some(&seq.mask))
}

/// Weights for an explicitly uniform (untrained) scorer.
pub fn score_tokens_uniform(seq: &TokenSequence) -> Result<Vec<f64>> {
    if seq.is_empty() {
        return Err(Error::contract("score-tokens: empty sequence"));
    }
    let n_active = seq.active_len();
    if n_active == 0 {
        return Err(Error::contract("score-tokens: no active tokens"));
    }
    Ok(seq
        .mask
        .iter()
        .map(|&m| if m { 1.0 / n_active as f64 } else { 0.0 })
        .collect())
}

// ── Training ───────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct ScorerTrainConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    pub held_out_fraction: f64,
    /// Gaussian noise added to the embedded inputs during training. Confident
    /// classification regions then concentrate near the embedding manifold,
    /// which matters when the classifier later scores continuous rows.
    pub input_noise: f64,
}

impl Default for ScorerTrainConfig {
    fn default() -> Self {
        ScorerTrainConfig {
            embed_dim: 64,
            hidden: 64,
            epochs: 6,
            lr: 3e-3,
            batch: 16,
            seed: 0,
            held_out_fraction: 0.1,
            input_noise: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScorerReport {
    pub held_out_accuracy: f64,
    pub train_rows: usize,
    pub held_out_rows: usize,
    pub mean_final_epoch_loss: f64,
}

/// Cross-entropy loss of one sample on a tape; returns the scalar loss id.
fn sample_loss(
    scorer: &Scorer,
    tape: &mut Tape,
    bind: &mut TapeBind,
    embedding: ParamId,
    seq: &TokenSequence,
    store: &ParamStore,
    noise: f64,
    rng: &mut SeedRng,
) -> Result<TensorId> {
    let table = bind.leaf(tape, store, embedding)?;
    let idx: Vec<usize> = seq.ids.iter().map(|&i| i as usize).collect();
    let mut rows = tape.gather_rows(table, &idx)?;
    if noise > 0.0 {
        let n = tape.tensor(rows).numel();
        let mut delta = vec![0.0; n];
        crate::rng::fill_normal(rng, &mut delta, noise);
        let shift = tape.constant(delta, tape.shape(rows).to_vec())?;
        rows = tape.add(rows, shift)?;
    }
    let logits = scorer.logits_on_tape(tape, bind, rows)?;
    nll_of_row(tape, logits, seq.label.0)
}

/// Stable `-log softmax(logits)[target]` for a `[1, n]` logits row.
pub(crate) fn nll_of_row(tape: &mut Tape, logits: TensorId, target: usize) -> Result<TensorId> {
    let n = tape.shape(logits)[1];
    if target >= n {
        return Err(Error::contract(format!(
            "target class {target} out of {n}"
        )));
    }
    let max = tape
        .data(logits)
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    // Constant shift: log-softmax is exactly invariant to it, gradients
    // included, and it keeps the exponentials bounded.
    let shifted = tape.add_const(logits, -max)?;
    let e = tape.exp(shifted)?;
    let se = tape.sum_all(e)?;
    let lse = tape.log(se)?;
    let t = tape.slice_cols(shifted, target, target + 1)?;
    let t = tape.sum_all(t)?;
    tape.sub(lse, t)
}

/// Train the scorer on a labeled corpus and freeze it. Held-out accuracy is
/// measured on a deterministic split held out of training.
pub fn train_scorer(corpus: &Corpus, cfg: &ScorerTrainConfig) -> Result<(Scorer, ScorerReport)> {
    let counts = corpus.per_style_counts();
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::contract(
            "scorer training needs at least 2 styles with rows",
        ));
    }
    let mut rng = seed_rng(cfg.seed);
    let mut scorer = Scorer::new(
        corpus.vocab.len(),
        cfg.embed_dim,
        cfg.hidden,
        corpus.style_count(),
        &mut rng,
    );

    let mut order: Vec<usize> = (0..corpus.rows.len()).collect();
    shuffle(&mut order, &mut rng);
    let held = ((corpus.rows.len() as f64 * cfg.held_out_fraction) as usize)
        .clamp(1, corpus.rows.len() - 1);
    let (held_out_idx, train_idx) = order.split_at(held);
    let held_out_idx = held_out_idx.to_vec();
    let mut train_idx = train_idx.to_vec();

    let trainable = scorer.store.trainable_ids();
    let sizes: Vec<usize> = trainable
        .iter()
        .map(|&id| scorer.store.get(id).numel())
        .collect();
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &sizes,
    );

    let mut mean_final_epoch_loss = 0.0;
    for _epoch in 0..cfg.epochs {
        shuffle(&mut train_idx, &mut rng);
        let mut epoch_loss = 0.0;
        for chunk in train_idx.chunks(cfg.batch.max(1)) {
            scorer.store.zero_grads();
            let inv = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let seq = &corpus.rows[i];
                let mut tape = Tape::new(Checks::On);
                let mut bind = TapeBind::new();
                let loss = sample_loss(
                    &scorer,
                    &mut tape,
                    &mut bind,
                    scorer.embedding,
                    seq,
                    &scorer.store,
                    cfg.input_noise,
                    &mut rng,
                )?;
                epoch_loss += tape.data(loss)[0];
                tape.backward(loss)?;
                bind.harvest(&tape, &mut scorer.store, inv);
            }
            step_params(&mut adam, &mut scorer.store, &trainable)?;
            normalize_rows_unit(scorer.store.get_mut(scorer.embedding));
        }
        mean_final_epoch_loss = epoch_loss / train_idx.len().max(1) as f64;
    }

    scorer.freeze();

    let mut correct = 0;
    for &i in &held_out_idx {
        let seq = &corpus.rows[i];
        if scorer.predict_label(seq)? == seq.label.0 {
            correct += 1;
        }
    }
    let report = ScorerReport {
        held_out_accuracy: correct as f64 / held_out_idx.len().max(1) as f64,
        train_rows: train_idx.len(),
        held_out_rows: held_out_idx.len(),
        mean_final_epoch_loss,
    };
    Ok((scorer, report))
}

/// Unit-normalized copies of the selected rows.
fn unit_rows(active_idx: &[usize], rows: &Tensor) -> Vec<Vec<f64>> {
    active_idx
        .iter()
        .map(|&i| {
            let row = rows.row(i);
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            row.iter().map(|x| x / norm).collect()
        })
        .collect()
}

/// Differentiable row-wise unit normalization, `x / √(‖x‖² + ε)`.
pub fn unit_rows_on_tape(tape: &mut Tape, rows: TensorId) -> Result<TensorId> {
    let cols = tape.shape(rows)[1];
    let sq = tape.mul(rows, rows)?;
    let mean = tape.mean_last(sq)?;
    let sum = tape.scale(mean, cols as f64)?;
    let guarded = tape.add_const(sum, 1e-24)?;
    let norm = tape.sqrt(guarded)?;
    tape.div(rows, norm)
}

/// Project each row of a table onto the unit sphere.
pub(crate) fn normalize_rows_unit(t: &mut Tensor) {
    let (rows, cols) = t.dims();
    for i in 0..rows {
        let row = &mut t.data[i * cols..(i + 1) * cols];
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
    }
}

/// Fisher-Yates with the crate RNG, so shuffles are seed-reproducible.
pub(crate) fn shuffle(order: &mut [usize], rng: &mut SeedRng) {
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

pub(crate) fn step_params(
    adam: &mut Adam,
    store: &mut ParamStore,
    ids: &[ParamId],
) -> Result<()> {
    // A parameter untouched by this batch's graphs still participates in
    // the decayed-moment update, with zero gradient.
    for &id in ids {
        if store.get(id).grad.is_none() {
            let n = store.get(id).numel();
            store.get_mut(id).grad = Some(vec![0.0; n]);
        }
    }
    adam.step_store(store, ids)
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let es: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = es.iter().sum();
    es.into_iter().map(|e| e / s).collect()
}

/// `y = x · W` with W `[in, out]` row-major.
fn matvec(w: &[f64], x: &[f64], out: usize) -> Vec<f64> {
    let mut y = vec![0.0; out];
    for (i, &xi) in x.iter().enumerate() {
        let row = &w[i * out..(i + 1) * out];
        for (yj, wj) in y.iter_mut().zip(row) {
            *yj += xi * wj;
        }
    }
    y
}

fn add_matvec(y: &mut [f64], w: &[f64], x: &[f64], out: usize) {
    for (i, &xi) in x.iter().enumerate() {
        let row = &w[i * out..(i + 1) * out];
        for (yj, wj) in y.iter_mut().zip(row) {
            *yj += xi * wj;
        }
    }
}

fn add_bias(y: &mut [f64], b: &[f64]) {
    for (yi, bi) in y.iter_mut().zip(b) {
        *yi += bi;
    }
}

fn sigmoid_inplace(y: &mut [f64]) {
    for v in y.iter_mut() {
        *v = 1.0 / (1.0 + (-*v).exp());
    }
}

fn tanh_inplace(y: &mut [f64]) {
    for v in y.iter_mut() {
        *v = v.tanh();
    }
}
