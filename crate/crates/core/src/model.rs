//! The assembled style-transfer model: frozen embedding table and scorer,
//! trainable flow chain, per-style conditional-layer-norm table, and the
//! tied-softmax logit scale.

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::flow::{FlowChain, SplitMode};
use crate::optim::{ParamId, ParamStore};
use crate::rng::{seed_rng, SeedRng};
use crate::scorer::Scorer;
use crate::tensor::Tensor;

/// How the conditional-layer-norm output (one row per content token) is
/// reduced to the style-position arity before fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClnMode {
    /// Take the row indexed by each style position (mod the content count).
    RowSelect,
    /// Mean-pool the rows and broadcast.
    MeanPool,
}

/// Which scorer drives the coupling-layer splits. `Uniform` disables the
/// attention-aware split: ties resolve by position parity per layer, i.e. a
/// plain parity split (the ablation arm).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitScorer {
    Trained,
    Uniform,
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub model_dim: usize,
    pub heads: usize,
    pub chain_len: usize,
    pub ff_dim: usize,
    pub rho: f64,
    pub cln_eps: f64,
    pub cln_mode: ClnMode,
    pub split_mode: SplitMode,
    pub split_scorer: SplitScorer,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            model_dim: 256,
            heads: 4,
            chain_len: 8,
            ff_dim: 256,
            rho: 0.25,
            cln_eps: 1e-6,
            cln_mode: ClnMode::RowSelect,
            split_mode: SplitMode::AttentionToken,
            split_scorer: SplitScorer::Trained,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.model_dim == 0 || self.heads == 0 || self.model_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "model_dim {} must be a positive multiple of heads {}",
                self.model_dim, self.heads
            )));
        }
        if self.chain_len == 0 {
            return Err(Error::Config("chain_len must be positive".into()));
        }
        if !(0.0 < self.rho && self.rho < 1.0) {
            return Err(Error::Config(format!("rho must be in (0,1), got {}", self.rho)));
        }
        if self.cln_eps <= 0.0 {
            return Err(Error::Config("cln_eps must be positive".into()));
        }
        Ok(())
    }
}

/// Per-style conditional-layer-norm gain/bias vectors.
#[derive(Debug, Clone)]
pub struct StyleTable {
    pub gammas: Vec<ParamId>,
    pub betas: Vec<ParamId>,
}

impl StyleTable {
    fn new(store: &mut ParamStore, styles: usize, dim: usize, rng: &mut SeedRng) -> StyleTable {
        let mut gammas = Vec::with_capacity(styles);
        let mut betas = Vec::with_capacity(styles);
        for s in 0..styles {
            // Small per-style offsets so the styles are distinguishable from
            // the first step.
            let mut g = Tensor::randn(vec![dim], 0.1, rng);
            for v in &mut g.data {
                *v += 1.0;
            }
            let b = Tensor::randn(vec![dim], 0.1, rng);
            gammas.push(store.add(format!("cln.{s}.gamma"), g.with_grad()));
            betas.push(store.add(format!("cln.{s}.beta"), b.with_grad()));
        }
        StyleTable { gammas, betas }
    }

    pub fn style_count(&self) -> usize {
        self.gammas.len()
    }

    pub fn pair(&self, style: usize) -> Result<(ParamId, ParamId)> {
        if style >= self.gammas.len() {
            return Err(Error::contract(format!(
                "style id {style} not in table of {}",
                self.gammas.len()
            )));
        }
        Ok((self.gammas[style], self.betas[style]))
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    /// Trainable parameters: chain blocks, style table, logit scale.
    pub store: ParamStore,
    pub chain: FlowChain,
    pub style_table: StyleTable,
    /// Softmax sharpness of the tied-embedding output distribution.
    pub logit_scale: ParamId,
    /// Frozen embedding table `[V, D]`, shared with the scorer that
    /// pre-trained it.
    pub embedding: Tensor,
    /// Frozen scorer: token scoring and the style classifier.
    pub scorer: Scorer,
    pub vocab: Vocabulary,
    pub style_names: Vec<String>,
}

impl Model {
    /// Build a fresh model around a pre-trained scorer. The embedding table
    /// is taken from the scorer and stays frozen.
    pub fn new(
        config: ModelConfig,
        vocab: Vocabulary,
        style_names: Vec<String>,
        scorer: Scorer,
        seed: u64,
    ) -> Result<Model> {
        config.validate()?;
        if scorer.embed_dim != config.model_dim {
            return Err(Error::Config(format!(
                "scorer embedding dim {} != model_dim {}",
                scorer.embed_dim, config.model_dim
            )));
        }
        if scorer.vocab_len != vocab.len() {
            return Err(Error::Config(format!(
                "scorer vocab {} != corpus vocab {}",
                scorer.vocab_len,
                vocab.len()
            )));
        }
        let mut rng = seed_rng(seed);
        let mut store = ParamStore::new();
        let chain = FlowChain::new(
            &mut store,
            "chain",
            config.chain_len,
            config.model_dim,
            config.heads,
            config.ff_dim,
            config.rho,
            config.split_mode,
            &mut rng,
        )?;
        let style_table = StyleTable::new(&mut store, style_names.len(), config.model_dim, &mut rng);
        let embedding = scorer.embedding_table();
        // Tied-softmax sharpness scaled to the table's typical squared row
        // norm (1 for unit-normalized rows), so reconstruction gradients
        // bite from the first step; trainable thereafter.
        let mean_sq: f64 = {
            let (v, d) = embedding.dims();
            embedding.data.iter().map(|x| x * x).sum::<f64>() * d as f64 / (v * d) as f64
        };
        let logit_scale = store.add(
            "logit_scale",
            Tensor::scalar((8.0 / mean_sq.max(1e-12)).clamp(1.0, 100.0)).with_grad(),
        );
        Ok(Model {
            config,
            store,
            chain,
            style_table,
            logit_scale,
            embedding,
            scorer,
            vocab,
            style_names,
        })
    }

    pub fn style_count(&self) -> usize {
        self.style_names.len()
    }

    pub fn opposite_style(&self, style: usize) -> usize {
        // Two-style transfer; the only other style.
        1 - style
    }

    /// Copy of the model around a replacement parameter store (parameter
    /// probing in tests).
    pub fn clone_with_store(&self, store: ParamStore) -> Model {
        let mut m = self.clone();
        m.store = store;
        m
    }
}
