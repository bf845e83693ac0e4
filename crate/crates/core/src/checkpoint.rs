//! Checkpoint container: magic string `SFLOW1`, a length-prefixed UTF-8
//! JSON metadata header (shapes, names, step, RNG state), then raw
//! little-endian f64 parameter blocks in header order.
//!
//! Round trips are bitwise exact, so a resumed run is indistinguishable
//! from an unbroken one.

use std::path::Path;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::flow::SplitMode;
use crate::model::{ClnMode, Model, ModelConfig, SplitScorer};
use crate::optim::{Adam, AdamConfig, ParamStore};
use crate::rng::SeedRng;
use crate::scorer::Scorer;

const MAGIC: &[u8; 6] = b"SFLOW1";
const VERSION: u32 = 1;

/// Optimizer and RNG state carried across checkpoint save/resume.
#[derive(Debug)]
pub struct TrainerState {
    pub step: u64,
    pub rng: SeedRng,
    pub adam: Adam,
}

#[derive(Serialize, Deserialize)]
struct SectionMeta {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct ScorerMeta {
    embed_dim: usize,
    hidden: usize,
    styles: usize,
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    model_dim: usize,
    heads: usize,
    chain_len: usize,
    ff_dim: usize,
    rho: f64,
    cln_eps: f64,
    cln_mode: String,
    split_mode: String,
    split_scorer: String,
}

#[derive(Serialize, Deserialize)]
struct AdamMeta {
    step: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    moment_params: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    kind: String,
    step: u64,
    rng_seed: Vec<u8>,
    rng_word_pos: String,
    vocab: Vec<String>,
    style_names: Vec<String>,
    scorer: ScorerMeta,
    model: Option<ModelMeta>,
    sections: Vec<SectionMeta>,
    adam: Option<AdamMeta>,
}

fn mode_to_str(m: ClnMode) -> &'static str {
    match m {
        ClnMode::RowSelect => "row-select",
        ClnMode::MeanPool => "mean-pool",
    }
}

fn mode_from_str(s: &str) -> Result<ClnMode> {
    match s {
        "row-select" => Ok(ClnMode::RowSelect),
        "mean-pool" => Ok(ClnMode::MeanPool),
        other => Err(Error::Checkpoint(format!("unknown cln mode {other:?}"))),
    }
}

fn split_to_str(m: SplitMode) -> &'static str {
    match m {
        SplitMode::AttentionToken => "attention-token",
        SplitMode::ChannelHalf => "channel-half",
    }
}

fn split_from_str(s: &str) -> Result<SplitMode> {
    match s {
        "attention-token" => Ok(SplitMode::AttentionToken),
        "channel-half" => Ok(SplitMode::ChannelHalf),
        other => Err(Error::Checkpoint(format!("unknown split mode {other:?}"))),
    }
}

fn scorer_kind_to_str(m: SplitScorer) -> &'static str {
    match m {
        SplitScorer::Trained => "trained",
        SplitScorer::Uniform => "uniform",
    }
}

fn scorer_kind_from_str(s: &str) -> Result<SplitScorer> {
    match s {
        "trained" => Ok(SplitScorer::Trained),
        "uniform" => Ok(SplitScorer::Uniform),
        other => Err(Error::Checkpoint(format!("unknown split scorer {other:?}"))),
    }
}

fn store_sections(prefix: &str, store: &ParamStore) -> Vec<SectionMeta> {
    store
        .ids()
        .map(|id| SectionMeta {
            name: format!("{prefix}.{}", store.name(id)),
            shape: store.get(id).shape.clone(),
            trainable: store.get(id).requires_grad,
        })
        .collect()
}

fn push_store_blocks(blocks: &mut Vec<Vec<f64>>, store: &ParamStore) {
    for id in store.ids() {
        blocks.push(store.get(id).data.clone());
    }
}

fn encode(header: &Header, blocks: &[Vec<f64>]) -> Result<Vec<u8>> {
    let header_bytes = serde_json::to_vec(header)
        .map_err(|e| Error::Checkpoint(format!("header encode: {e}")))?;
    let mut out = Vec::with_capacity(
        MAGIC.len() + 8 + header_bytes.len() + blocks.iter().map(|b| b.len() * 8).sum::<usize>(),
    );
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for block in blocks {
        for v in block {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn decode(bytes: &[u8]) -> Result<(Header, Vec<f64>)> {
    if bytes.len() < MAGIC.len() + 8 || &bytes[..6] != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    let len = u64::from_le_bytes(bytes[6..14].try_into().unwrap()) as usize;
    if bytes.len() < 14 + len {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[14..14 + len])
        .map_err(|e| Error::Checkpoint(format!("header decode: {e}")))?;
    if header.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "incompatible checkpoint version {} (expected {VERSION})",
            header.version
        )));
    }
    let payload = &bytes[14 + len..];
    if payload.len() % 8 != 0 {
        return Err(Error::Checkpoint("payload not f64-aligned".into()));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, values))
}

struct BlockReader<'a> {
    values: &'a [f64],
    at: usize,
}

impl<'a> BlockReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [f64]> {
        if self.at + n > self.values.len() {
            return Err(Error::Checkpoint("payload shorter than header sections".into()));
        }
        let s = &self.values[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }
}

fn restore_store(
    store: &mut ParamStore,
    prefix: &str,
    sections: &[SectionMeta],
    reader: &mut BlockReader<'_>,
) -> Result<()> {
    let expected: Vec<_> = store.ids().collect();
    if sections.len() < expected.len() {
        return Err(Error::Checkpoint(format!(
            "{prefix}: {} sections for {} parameters",
            sections.len(),
            expected.len()
        )));
    }
    for (id, meta) in expected.into_iter().zip(sections) {
        let want = format!("{prefix}.{}", store.name(id));
        if meta.name != want {
            return Err(Error::Checkpoint(format!(
                "section {} does not match parameter {want}",
                meta.name
            )));
        }
        if meta.shape != store.get(id).shape {
            return Err(Error::Checkpoint(format!(
                "section {}: shape {:?} vs {:?}",
                meta.name,
                meta.shape,
                store.get(id).shape
            )));
        }
        let n = store.get(id).numel();
        let data = reader.take(n)?;
        store.get_mut(id).data.copy_from_slice(data);
        store.get_mut(id).requires_grad = meta.trainable;
    }
    Ok(())
}

fn rng_meta(rng: &SeedRng) -> (Vec<u8>, String) {
    (rng.get_seed().to_vec(), rng.get_word_pos().to_string())
}

fn rng_restore(seed: &[u8], word_pos: &str) -> Result<SeedRng> {
    let seed: [u8; 32] = seed
        .try_into()
        .map_err(|_| Error::Checkpoint("rng seed must be 32 bytes".into()))?;
    let mut rng = SeedRng::from_seed(seed);
    let pos: u128 = word_pos
        .parse()
        .map_err(|_| Error::Checkpoint(format!("bad rng word position {word_pos:?}")))?;
    rng.set_word_pos(pos);
    Ok(rng)
}

// ── Scorer checkpoints ─────────────────────────────────────────────────

pub fn save_scorer(
    path: &Path,
    scorer: &Scorer,
    vocab: &Vocabulary,
    style_names: &[String],
) -> Result<()> {
    let header = Header {
        version: VERSION,
        kind: "scorer".into(),
        step: 0,
        rng_seed: vec![0; 32],
        rng_word_pos: "0".into(),
        vocab: vocab.tokens().to_vec(),
        style_names: style_names.to_vec(),
        scorer: ScorerMeta {
            embed_dim: scorer.embed_dim,
            hidden: scorer.hidden,
            styles: scorer.styles,
        },
        model: None,
        sections: store_sections("scorer", scorer.param_store()),
        adam: None,
    };
    let mut blocks = Vec::new();
    push_store_blocks(&mut blocks, scorer.param_store());
    let bytes = encode(&header, &blocks)?;
    std::fs::write(path, bytes).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn load_scorer(path: &Path) -> Result<(Scorer, Vocabulary, Vec<String>)> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let (header, values) = decode(&bytes)?;
    if header.kind != "scorer" {
        return Err(Error::Checkpoint(format!(
            "expected a scorer checkpoint, found kind {:?}",
            header.kind
        )));
    }
    let vocab = Vocabulary::from_tokens(header.vocab.clone())?;
    let mut dummy = SeedRng::seed_from_u64(0);
    let mut scorer = Scorer::new(
        vocab.len(),
        header.scorer.embed_dim,
        header.scorer.hidden,
        header.scorer.styles,
        &mut dummy,
    );
    let mut reader = BlockReader {
        values: &values,
        at: 0,
    };
    restore_store(scorer.param_store_mut(), "scorer", &header.sections, &mut reader)?;
    scorer.freeze();
    Ok((scorer, vocab, header.style_names))
}

// ── Model checkpoints ──────────────────────────────────────────────────

pub fn save_model(path: &Path, model: &Model, trainer: Option<&TrainerState>) -> Result<()> {
    let mut sections = store_sections("scorer", model.scorer.param_store());
    sections.extend(store_sections("model", &model.store));
    let (rng_seed, rng_word_pos) = match trainer {
        Some(t) => rng_meta(&t.rng),
        None => (vec![0; 32], "0".into()),
    };
    let header = Header {
        version: VERSION,
        kind: "model".into(),
        step: trainer.map_or(0, |t| t.step),
        rng_seed,
        rng_word_pos,
        vocab: model.vocab.tokens().to_vec(),
        style_names: model.style_names.clone(),
        scorer: ScorerMeta {
            embed_dim: model.scorer.embed_dim,
            hidden: model.scorer.hidden,
            styles: model.scorer.styles,
        },
        model: Some(ModelMeta {
            model_dim: model.config.model_dim,
            heads: model.config.heads,
            chain_len: model.config.chain_len,
            ff_dim: model.config.ff_dim,
            rho: model.config.rho,
            cln_eps: model.config.cln_eps,
            cln_mode: mode_to_str(model.config.cln_mode).into(),
            split_mode: split_to_str(model.config.split_mode).into(),
            split_scorer: scorer_kind_to_str(model.config.split_scorer).into(),
        }),
        sections,
        adam: trainer.map(|t| AdamMeta {
            step: t.adam.step_count(),
            lr: t.adam.cfg.lr,
            beta1: t.adam.cfg.beta1,
            beta2: t.adam.cfg.beta2,
            eps: t.adam.cfg.eps,
            moment_params: t.adam.moments().len(),
        }),
    };
    let mut blocks = Vec::new();
    push_store_blocks(&mut blocks, model.scorer.param_store());
    push_store_blocks(&mut blocks, &model.store);
    if let Some(t) = trainer {
        for (m, v) in t.adam.moments() {
            blocks.push(m.clone());
            blocks.push(v.clone());
        }
    }
    let bytes = encode(&header, &blocks)?;
    std::fs::write(path, bytes).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn load_model(path: &Path) -> Result<(Model, Option<TrainerState>)> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let (header, values) = decode(&bytes)?;
    if header.kind != "model" {
        return Err(Error::Checkpoint(format!(
            "expected a model checkpoint, found kind {:?}",
            header.kind
        )));
    }
    let meta = header
        .model
        .as_ref()
        .ok_or_else(|| Error::Checkpoint("model checkpoint missing model metadata".into()))?;
    let vocab = Vocabulary::from_tokens(header.vocab.clone())?;
    let mut dummy = SeedRng::seed_from_u64(0);
    let mut scorer = Scorer::new(
        vocab.len(),
        header.scorer.embed_dim,
        header.scorer.hidden,
        header.scorer.styles,
        &mut dummy,
    );
    let scorer_count = scorer.param_store().len();
    let mut reader = BlockReader {
        values: &values,
        at: 0,
    };
    restore_store(
        scorer.param_store_mut(),
        "scorer",
        &header.sections[..scorer_count],
        &mut reader,
    )?;

    let config = ModelConfig {
        model_dim: meta.model_dim,
        heads: meta.heads,
        chain_len: meta.chain_len,
        ff_dim: meta.ff_dim,
        rho: meta.rho,
        cln_eps: meta.cln_eps,
        cln_mode: mode_from_str(&meta.cln_mode)?,
        split_mode: split_from_str(&meta.split_mode)?,
        split_scorer: scorer_kind_from_str(&meta.split_scorer)?,
    };
    let mut model = Model::new(config, vocab, header.style_names.clone(), scorer, 0)?;
    restore_store(
        &mut model.store,
        "model",
        &header.sections[scorer_count..],
        &mut reader,
    )?;
    // The embedding snapshot must match the (restored) scorer table.
    model.embedding = model.scorer.embedding_table();

    let trainer = match header.adam {
        Some(meta_adam) => {
            let mut moments = Vec::with_capacity(meta_adam.moment_params);
            let trainable = model.store.trainable_ids();
            if trainable.len() != meta_adam.moment_params {
                return Err(Error::Checkpoint(format!(
                    "{} moment sections for {} trainable parameters",
                    meta_adam.moment_params,
                    trainable.len()
                )));
            }
            for id in &trainable {
                let n = model.store.get(*id).numel();
                let m = reader.take(n)?.to_vec();
                let v = reader.take(n)?.to_vec();
                moments.push((m, v));
            }
            Some(TrainerState {
                step: header.step,
                rng: rng_restore(&header.rng_seed, &header.rng_word_pos)?,
                adam: Adam::restore(
                    AdamConfig {
                        lr: meta_adam.lr,
                        beta1: meta_adam.beta1,
                        beta2: meta_adam.beta2,
                        eps: meta_adam.eps,
                    },
                    meta_adam.step,
                    moments,
                ),
            })
        }
        None => None,
    };
    Ok((model, trainer))
}
