//! Flat `key = value` config file: one assignment per line, `#` comments,
//! unknown keys rejected. Command-line flags override file keys. Relative
//! paths resolve against `workspace_root` (default: the config file's
//! directory, or the working directory without a file).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use styleflow_core::error::{Error, Result};
use styleflow_core::flow::SplitMode;
use styleflow_core::loss::LossWeights;
use styleflow_core::model::{ClnMode, ModelConfig, SplitScorer};
use styleflow_core::ngram::LmConfig;
use styleflow_core::scorer::ScorerTrainConfig;
use styleflow_core::tape::Checks;

/// Every key any command reads. Parsing rejects anything else.
pub const KNOWN_KEYS: &[&str] = &[
    // model
    "model_dim",
    "heads",
    "chain_len",
    "ff_dim",
    "rho",
    "cln_eps",
    "cln_mode",
    "split_mode",
    "split_scorer",
    // scorer pretraining
    "scorer_hidden",
    "scorer_epochs",
    "scorer_lr",
    "scorer_batch",
    "scorer_held_out",
    // training
    "lr",
    "batch",
    "epochs",
    "steps",
    "lambda_self",
    "lambda_cycle",
    "lambda_content",
    "lambda_style",
    "checkpoint_every",
    "checks",
    "seed",
    "threads",
    // data
    "workspace_root",
    "train_data",
    "lowercase",
    "scorer_ckpt",
    "model_ckpt",
    "eval_scorer_ckpt",
    "metrics_csv",
    // augmentation
    "aug_epsilon",
    "aug_n",
    "aug_content_only",
    "aug_mix_ratio",
    "aug_corpus",
    // evaluation
    "lm_order",
    "lm_discount",
];

pub struct FileConfig {
    map: BTreeMap<String, String>,
    root: PathBuf,
}

impl FileConfig {
    pub fn empty() -> FileConfig {
        FileConfig {
            map: BTreeMap::new(),
            root: PathBuf::from("."),
        }
    }

    pub fn load(path: Option<&Path>) -> Result<FileConfig> {
        let Some(path) = path else {
            return Ok(FileConfig::empty());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{}:{}: expected key = value", path.display(), i + 1))
            })?;
            let key = key.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!(
                    "{}:{}: unknown key {key:?}",
                    path.display(),
                    i + 1
                )));
            }
            if map.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!(
                    "{}:{}: duplicate key {key:?}",
                    path.display(),
                    i + 1
                )));
            }
        }
        let mut cfg = FileConfig {
            map,
            root: path.parent().unwrap_or(Path::new(".")).to_path_buf(),
        };
        if let Some(root) = cfg.get_str("workspace_root") {
            let declared = PathBuf::from(root);
            cfg.root = if declared.is_absolute() {
                declared
            } else {
                cfg.root.join(declared)
            };
        }
        Ok(cfg)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    pub fn get_path(&self, key: &str) -> Option<PathBuf> {
        self.get_str(key).map(|s| self.resolve(Path::new(s)))
    }

    /// Resolve a path against the workspace root.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.map.get(key) {
            None => Ok(default),
            Some(raw) => raw.parse().map_err(|_| {
                Error::Config(format!("key {key:?}: cannot parse value {raw:?}"))
            }),
        }
    }

    pub fn get_usize(&self, key: &str, default: usize) -> Result<usize> {
        self.parse(key, default)
    }

    pub fn get_u64(&self, key: &str, default: u64) -> Result<u64> {
        self.parse(key, default)
    }

    pub fn get_f64(&self, key: &str, default: f64) -> Result<f64> {
        self.parse(key, default)
    }

    pub fn get_bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.map.get(key).map(String::as_str) {
            None => Ok(default),
            Some("true" | "yes" | "on" | "1") => Ok(true),
            Some("false" | "no" | "off" | "0") => Ok(false),
            Some(other) => Err(Error::Config(format!(
                "key {key:?}: expected a boolean, got {other:?}"
            ))),
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let defaults = ModelConfig::default();
        let cfg = ModelConfig {
            model_dim: self.get_usize("model_dim", defaults.model_dim)?,
            heads: self.get_usize("heads", defaults.heads)?,
            chain_len: self.get_usize("chain_len", defaults.chain_len)?,
            ff_dim: self.get_usize("ff_dim", defaults.ff_dim)?,
            rho: self.get_f64("rho", defaults.rho)?,
            cln_eps: self.get_f64("cln_eps", defaults.cln_eps)?,
            cln_mode: match self.get_str("cln_mode").unwrap_or("row-select") {
                "row-select" => ClnMode::RowSelect,
                "mean-pool" => ClnMode::MeanPool,
                other => {
                    return Err(Error::Config(format!("unknown cln_mode {other:?}")));
                }
            },
            split_mode: match self.get_str("split_mode").unwrap_or("attention-token") {
                "attention-token" => SplitMode::AttentionToken,
                "channel-half" => SplitMode::ChannelHalf,
                other => {
                    return Err(Error::Config(format!("unknown split_mode {other:?}")));
                }
            },
            split_scorer: match self.get_str("split_scorer").unwrap_or("trained") {
                "trained" => SplitScorer::Trained,
                "uniform" => SplitScorer::Uniform,
                other => {
                    return Err(Error::Config(format!("unknown split_scorer {other:?}")));
                }
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn scorer_config(&self, seed: u64) -> Result<ScorerTrainConfig> {
        let d = ScorerTrainConfig::default();
        Ok(ScorerTrainConfig {
            // The scorer embeds with the model dimension so the table is
            // shared with the flow.
            embed_dim: self.get_usize("model_dim", ModelConfig::default().model_dim)?,
            hidden: self.get_usize("scorer_hidden", d.hidden)?,
            epochs: self.get_usize("scorer_epochs", d.epochs)?,
            lr: self.get_f64("scorer_lr", d.lr)?,
            batch: self.get_usize("scorer_batch", d.batch)?,
            seed,
            held_out_fraction: self.get_f64("scorer_held_out", d.held_out_fraction)?,
        })
    }

    pub fn loss_weights(&self) -> Result<LossWeights> {
        let d = LossWeights::default();
        let w = LossWeights {
            self_w: self.get_f64("lambda_self", d.self_w)?,
            cycle_w: self.get_f64("lambda_cycle", d.cycle_w)?,
            content_w: self.get_f64("lambda_content", d.content_w)?,
            style_w: self.get_f64("lambda_style", d.style_w)?,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn checks(&self) -> Result<Checks> {
        match self.get_str("checks").unwrap_or("on") {
            "on" => Ok(Checks::On),
            "off" => Ok(Checks::Off),
            other => Err(Error::Config(format!("unknown checks mode {other:?}"))),
        }
    }

    pub fn lm_config(&self) -> Result<LmConfig> {
        let d = LmConfig::default();
        Ok(LmConfig {
            order: self.get_usize("lm_order", d.order)?,
            discount: self.get_f64("lm_discount", d.discount)?,
        })
    }
}
