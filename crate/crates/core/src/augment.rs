//! Latent-space Gaussian data augmentation: encode, perturb the latent with
//! `ε · N(0, I)`, invert through the recorded forward partitions, decode.
//! Outputs keep the source style label.

use std::path::Path;

use crate::data::{Corpus, TokenSequence, PAD};
use crate::error::{Error, Result};
use crate::flow::{InverseSplits, LatentState};
use crate::model::Model;
use crate::optim::TapeBind;
use crate::rng::{seed_rng, standard_normal, SeedRng};
use crate::tape::{Checks, Tape};
use crate::transfer::{decode_tokens, encode};

#[derive(Debug, Clone, Copy)]
pub struct PerturbationConfig {
    /// Perturbation scale; 0 is the exact identity end to end.
    pub epsilon: f64,
    /// Variants generated per input.
    pub n: usize,
    pub seed: u64,
    /// Restrict noise to content positions (label-safety experiments).
    pub content_only: bool,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        PerturbationConfig {
            epsilon: 0.1,
            n: 1,
            seed: 0,
            content_only: false,
        }
    }
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilon < 0.0 || !self.epsilon.is_finite() {
            return Err(Error::Config(format!(
                "perturbation scale must be nonnegative, got {}",
                self.epsilon
            )));
        }
        if self.n == 0 {
            return Err(Error::Config("perturbation needs n >= 1 variants".into()));
        }
        Ok(())
    }
}

/// Add `ε · N(0, I)` to the latent values. Noise draws do not depend on the
/// values; the log-det is marked stale. `ε = 0` returns the latent bitwise
/// unchanged.
pub fn perturb_latent(
    z: &LatentState,
    epsilon: f64,
    rng: &mut SeedRng,
    content_only: bool,
) -> Result<LatentState> {
    if epsilon < 0.0 || !epsilon.is_finite() {
        return Err(Error::contract(format!(
            "perturbation scale must be nonnegative, got {epsilon}"
        )));
    }
    if epsilon == 0.0 {
        return Ok(z.clone());
    }
    let mut out = z.clone();
    let (_, d) = out.values.dims();
    let style_mask: Vec<bool> = {
        let mut m = vec![false; z.seq_len()];
        for &i in &z.partition.style {
            m[i] = true;
        }
        m
    };
    for (flat, v) in out.values.data.iter_mut().enumerate() {
        // Draw for every element so the stream position is independent of
        // the mask.
        let noise = epsilon * standard_normal(rng);
        let row = flat / d;
        if content_only && style_mask[row] {
            continue;
        }
        *v += noise;
    }
    out.logdet = None;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct AugmentRecord {
    pub source_line: usize,
    pub variant: usize,
    pub epsilon: f64,
    pub label_preserved: bool,
    /// True when the decode collapsed to padding everywhere.
    pub degenerate: bool,
    pub seq: TokenSequence,
}

/// Generate `n` perturbed variants of one sentence. Every variant is
/// returned; degenerate decodes are flagged, never dropped.
pub fn augment(
    model: &Model,
    seq: &TokenSequence,
    cfg: &PerturbationConfig,
    rng: &mut SeedRng,
    source_line: usize,
) -> Result<Vec<AugmentRecord>> {
    cfg.validate()?;
    let z = encode(model, seq)?;
    let mut out = Vec::with_capacity(cfg.n);
    for variant in 0..cfg.n {
        let perturbed = perturb_latent(&z, cfg.epsilon, rng, cfg.content_only)?;
        let mut tape = Tape::new(Checks::On);
        let mut bind = TapeBind::new();
        let zid = tape.leaf(&perturbed.values)?;
        let inv = model.chain.inverse(
            &mut tape,
            &mut bind,
            &model.store,
            zid,
            InverseSplits::Recorded(&perturbed.splits),
        )?;
        let rows = tape.value(inv.output);
        let ids = decode_tokens(&rows, &model.embedding);
        let degenerate = ids.iter().all(|&id| id == PAD);
        let aug_seq = TokenSequence {
            mask: vec![true; ids.len()],
            ids,
            label: seq.label,
        };
        let label_preserved = model.scorer.predict_label(&aug_seq)? == seq.label.0;
        out.push(AugmentRecord {
            source_line,
            variant,
            epsilon: cfg.epsilon,
            label_preserved,
            degenerate,
            seq: aug_seq,
        });
    }
    Ok(out)
}

/// Augment every row of a corpus; deterministic in the config seed.
pub fn augment_corpus(
    model: &Model,
    corpus: &Corpus,
    cfg: &PerturbationConfig,
) -> Result<Vec<AugmentRecord>> {
    cfg.validate()?;
    let mut rng = seed_rng(cfg.seed);
    let mut all = Vec::with_capacity(corpus.rows.len() * cfg.n);
    for (line, seq) in corpus.rows.iter().enumerate() {
        all.extend(augment(model, seq, cfg, &mut rng, line)?);
    }
    Ok(all)
}

/// Corpus-schema TSV of the augmented rows (`label<TAB>sentence`).
pub fn write_augmented_tsv(path: &Path, records: &[AugmentRecord], model: &Model) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&format!(
            "{}\t{}\n",
            r.seq.label.0,
            r.seq.text(&model.vocab)?
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Sidecar CSV: `source_line,variant_index,epsilon,label_preserved`.
pub fn write_augment_sidecar(path: &Path, records: &[AugmentRecord]) -> Result<()> {
    let mut out = String::from("source_line,variant_index,epsilon,label_preserved\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.source_line, r.variant, r.epsilon, r.label_preserved
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}
