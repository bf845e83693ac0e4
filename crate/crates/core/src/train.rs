//! Mini-batch training over the four-part objective, with step metrics,
//! checkpoint cadence, and exact resume.
//!
//! Batches are drawn with replacement from the seeded RNG each step, so the
//! whole trajectory is a pure function of (corpus, config, seed) and a
//! checkpoint restores it mid-run without auxiliary order state.

use std::path::{Path, PathBuf};

use rand::Rng;

use crate::checkpoint::{save_model, TrainerState};
use crate::data::{Corpus, TokenSequence};
use crate::error::{Error, Result};
use crate::loss::{total_loss_on_tape_opts, LossBreakdown, LossWeights};
use crate::model::Model;
use crate::optim::{Adam, AdamConfig, TapeBind};
use crate::rng::seed_rng;
use crate::scorer::step_params;
use crate::tape::{Checks, Tape};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Explicit step count; overrides `epochs · ⌈rows/batch⌉` when set.
    pub steps: Option<u64>,
    pub weights: LossWeights,
    pub seed: u64,
    /// Steps between checkpoint writes; 0 writes only the final state.
    pub checkpoint_every: u64,
    pub checkpoint_path: Option<PathBuf>,
    pub metrics_path: Option<PathBuf>,
    /// NaN/Inf detection at op boundaries.
    pub checks: Checks,
    /// Snap transferred rows to vocabulary embeddings inside the style
    /// loss (straight-through gradients).
    pub straight_through: bool,
    /// Extra rows (augmented corpus) mixed into batch sampling.
    pub mix_rows: Vec<TokenSequence>,
    /// Probability of drawing a batch element from `mix_rows`.
    pub mix_ratio: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch: 32,
            epochs: 10,
            steps: None,
            weights: LossWeights::default(),
            seed: 0,
            checkpoint_every: 0,
            checkpoint_path: None,
            metrics_path: None,
            checks: Checks::On,
            straight_through: false,
            mix_rows: Vec::new(),
            mix_ratio: 0.25,
        }
    }
}

impl TrainConfig {
    pub fn total_steps(&self, rows: usize) -> u64 {
        match self.steps {
            Some(s) => s,
            None => {
                let per_epoch = rows.div_ceil(self.batch.max(1)) as u64;
                self.epochs as u64 * per_epoch
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.mix_ratio) {
            return Err(Error::Config(format!(
                "mix ratio must be in [0,1], got {}",
                self.mix_ratio
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: LossBreakdown,
    pub lr: f64,
}

/// `step,self,cycle,content,style,total,lr` rows.
pub fn write_metrics_csv(path: &Path, metrics: &[StepMetrics]) -> Result<()> {
    let mut out = String::from("step,self,cycle,content,style,total,lr\n");
    for m in metrics {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            m.step,
            m.loss.self_loss,
            m.loss.cycle_loss,
            m.loss.content_loss,
            m.loss.style_loss,
            m.loss.total,
            m.lr
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn validate_corpus(model: &Model, corpus: &Corpus) -> Result<()> {
    if corpus.rows.is_empty() {
        return Err(Error::Data("training corpus has no rows".into()));
    }
    let vocab = model.vocab.len() as u32;
    for (i, row) in corpus.rows.iter().enumerate() {
        if row.label.0 >= model.style_count() {
            return Err(Error::Data(format!(
                "row {i}: style {} outside the model's {} styles",
                row.label,
                model.style_count()
            )));
        }
        if let Some(&bad) = row.ids.iter().find(|&&id| id >= vocab) {
            return Err(Error::Data(format!(
                "row {i}: token id {bad} outside the model vocabulary of {vocab}"
            )));
        }
    }
    Ok(())
}

/// Train in place. Pass a restored `TrainerState` to continue a checkpointed
/// run; otherwise a fresh state is derived from the seed. Returns per-step
/// metrics (averaged over the batch) and the final state.
pub fn train(
    model: &mut Model,
    corpus: &Corpus,
    cfg: &TrainConfig,
    state: Option<TrainerState>,
) -> Result<(Vec<StepMetrics>, TrainerState)> {
    cfg.validate()?;
    validate_corpus(model, corpus)?;

    let trainable = model.store.trainable_ids();
    let mut state = match state {
        Some(s) => s,
        None => {
            let sizes: Vec<usize> = trainable
                .iter()
                .map(|&id| model.store.get(id).numel())
                .collect();
            TrainerState {
                step: 0,
                rng: seed_rng(cfg.seed),
                adam: Adam::new(
                    AdamConfig {
                        lr: cfg.lr,
                        ..AdamConfig::default()
                    },
                    &sizes,
                ),
            }
        }
    };

    let total_steps = cfg.total_steps(corpus.rows.len());
    let mut metrics = Vec::new();

    while state.step < total_steps {
        let mut sum = LossBreakdown {
            self_loss: 0.0,
            cycle_loss: 0.0,
            content_loss: 0.0,
            style_loss: 0.0,
            total: 0.0,
        };
        model.store.zero_grads();
        let inv = 1.0 / cfg.batch as f64;
        let mut batch_desc = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let from_mix = !cfg.mix_rows.is_empty() && state.rng.gen::<f64>() < cfg.mix_ratio;
            let seq = if from_mix {
                let i = state.rng.gen_range(0..cfg.mix_rows.len());
                batch_desc.push(format!("mix:{i}"));
                &cfg.mix_rows[i]
            } else {
                let i = state.rng.gen_range(0..corpus.rows.len());
                batch_desc.push(format!("corpus:{i}"));
                &corpus.rows[i]
            };
            let target = model.opposite_style(seq.label.0);

            let mut tape = Tape::new(cfg.checks);
            let mut bind = TapeBind::new();
            let losses = total_loss_on_tape_opts(
                &mut tape,
                &mut bind,
                model,
                seq,
                target,
                &cfg.weights,
                cfg.straight_through,
            )
            .map_err(|e| diagnostic(e, state.step, &batch_desc))?;
            if !losses.breakdown.total.is_finite() {
                return Err(diagnostic(
                    Error::Numeric {
                        op: "train",
                        detail: format!("non-finite total loss {}", losses.breakdown.total),
                    },
                    state.step,
                    &batch_desc,
                ));
            }
            tape.backward(losses.total)?;
            bind.harvest(&tape, &mut model.store, inv);

            sum.self_loss += losses.breakdown.self_loss * inv;
            sum.cycle_loss += losses.breakdown.cycle_loss * inv;
            sum.content_loss += losses.breakdown.content_loss * inv;
            sum.style_loss += losses.breakdown.style_loss * inv;
            sum.total += losses.breakdown.total * inv;
        }
        step_params(&mut state.adam, &mut model.store, &trainable)?;
        state.step += 1;
        metrics.push(StepMetrics {
            step: state.step,
            loss: sum,
            lr: cfg.lr,
        });

        if cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 {
            if let Some(path) = &cfg.checkpoint_path {
                save_model(path, model, Some(&state))?;
            }
        }
    }

    if let Some(path) = &cfg.checkpoint_path {
        save_model(path, model, Some(&state))?;
    }
    if let Some(path) = &cfg.metrics_path {
        write_metrics_csv(path, &metrics)?;
    }
    Ok((metrics, state))
}

/// Attach the offending batch to a training failure so the abort is
/// diagnosable.
fn diagnostic(err: Error, step: u64, batch: &[String]) -> Error {
    match err {
        Error::Numeric { op, detail } => Error::Numeric {
            op,
            detail: format!("step {step}, batch [{}]: {detail}", batch.join(", ")),
        },
        other => other,
    }
}
