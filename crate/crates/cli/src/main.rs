//! Command-line surface for the style transfer pipeline: scorer
//! pretraining, flow training, transfer, augmentation, and evaluation, all
//! driven by one flat config file. Every command is reproducible from
//! (config, seed).

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::FileConfig;
use styleflow_core::augment::{augment_corpus, write_augment_sidecar, write_augmented_tsv, PerturbationConfig};
use styleflow_core::checkpoint::{load_model, load_scorer, save_scorer};
use styleflow_core::data::{Corpus, LoadOptions, StyleId};
use styleflow_core::error::{Error, Result};
use styleflow_core::eval::{evaluate_threaded, read_references, render_report, write_report};
use styleflow_core::model::Model;
use styleflow_core::ngram::NGramLm;
use styleflow_core::scorer::train_scorer;
use styleflow_core::train::{train, TrainConfig};
use styleflow_core::transfer::{read_transfer_output, reconstruct_exact, transfer, write_transfer_output};

#[derive(Parser)]
#[command(
    name = "styleflow",
    about = "Invertible-flow text style transfer: train, transfer, augment, evaluate",
    version
)]
struct Cli {
    /// Flat key = value config file; flags override config keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the `seed` config key.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for evaluation; overrides the `threads` config key.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train the attention classifier and write its checkpoint.
    #[command(
        name = "train-scorer",
        after_help = "Config keys read:\n  \
        model_dim, scorer_hidden, scorer_epochs, scorer_lr, scorer_batch,\n  \
        scorer_held_out, seed, train_data, lowercase, scorer_ckpt, workspace_root"
    )]
    TrainScorer {
        /// Output checkpoint path; overrides the `scorer_ckpt` config key.
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Train the flow model against a frozen scorer checkpoint.
    #[command(after_help = "Config keys read:\n  \
        model_dim, heads, chain_len, ff_dim, rho, cln_eps, cln_mode, split_mode,\n  \
        split_scorer, lr, batch, epochs, steps, lambda_self, lambda_cycle,\n  \
        lambda_content, lambda_style, checkpoint_every, checks, seed, train_data,\n  \
        lowercase, scorer_ckpt, model_ckpt, metrics_csv, aug_corpus, aug_mix_ratio,\n  \
        workspace_root")]
    Train {
        /// Output checkpoint path; overrides the `model_ckpt` config key.
        #[arg(long)]
        out: Option<PathBuf>,

        /// Continue from the existing model checkpoint.
        #[arg(long)]
        resume: bool,
    },

    /// Transfer a corpus to a target style.
    #[command(after_help = "Config keys read:\n  \
        model_ckpt, lowercase, seed, workspace_root")]
    Transfer {
        /// Input corpus (label<TAB>sentence).
        input: PathBuf,

        /// Target style: 0, 1, negative, positive, or `opposite` (per row).
        #[arg(long, default_value = "opposite")]
        target_style: String,

        /// Disable style replacement: exact same-style reconstruction.
        #[arg(long)]
        keep_style: bool,

        /// Output file; defaults to transfer.tsv in the working directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Generate latent-perturbation variants of a corpus.
    #[command(after_help = "Config keys read:\n  \
        model_ckpt, aug_epsilon, aug_n, aug_content_only, seed, lowercase,\n  \
        workspace_root")]
    Augment {
        /// Input corpus (label<TAB>sentence).
        input: PathBuf,

        /// Output TSV; a `.sidecar.csv` with per-variant metadata is written
        /// next to it.
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Score a transfer output file: accuracy, self/ref BLEU, perplexity.
    #[command(after_help = "Config keys read:\n  \
        eval_scorer_ckpt, train_data, lm_order, lm_discount, lowercase, threads,\n  \
        workspace_root")]
    Eval {
        /// Transfer output file (4-column TSV).
        outputs: PathBuf,

        /// Reference sentences, one per output row.
        #[arg(long)]
        references: Option<PathBuf>,

        /// Also write the report here (always printed to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = FileConfig::load(cli.config.as_deref())?;
    let seed = match cli.seed {
        Some(s) => s,
        None => cfg.get_u64("seed", 0)?,
    };
    let threads = match cli.threads {
        Some(t) => t,
        None => cfg.get_usize("threads", 1)?,
    };
    if threads == 0 {
        return Err(Error::Config("threads must be at least 1".into()));
    }

    match cli.command {
        Command::TrainScorer { out } => cmd_train_scorer(&cfg, seed, out),
        Command::Train { out, resume } => cmd_train(&cfg, seed, out, resume),
        Command::Transfer {
            input,
            target_style,
            keep_style,
            out,
        } => cmd_transfer(&cfg, &input, &target_style, keep_style, out),
        Command::Augment { input, out } => cmd_augment(&cfg, seed, &input, out),
        Command::Eval {
            outputs,
            references,
            out,
        } => cmd_eval(&cfg, threads, &outputs, references, out),
    }
}

fn load_options(cfg: &FileConfig) -> Result<LoadOptions> {
    Ok(LoadOptions {
        lowercase: cfg.get_bool("lowercase", true)?,
    })
}

fn require_path(cfg: &FileConfig, key: &str) -> Result<PathBuf> {
    cfg.get_path(key)
        .ok_or_else(|| Error::Config(format!("config key {key:?} is required")))
}

fn load_model_from_cfg(cfg: &FileConfig) -> Result<Model> {
    let path = require_path(cfg, "model_ckpt")?;
    let (model, _) = load_model(&path)?;
    Ok(model)
}

fn cmd_train_scorer(cfg: &FileConfig, seed: u64, out: Option<PathBuf>) -> Result<()> {
    let data = require_path(cfg, "train_data")?;
    let corpus = Corpus::load(&data, load_options(cfg)?)?;
    let counts = corpus.per_style_counts();
    println!(
        "corpus: {} rows ({}), vocab {}",
        corpus.rows.len(),
        counts
            .iter()
            .enumerate()
            .map(|(s, c)| format!("{}={c}", corpus.style_names[s]))
            .collect::<Vec<_>>()
            .join(", "),
        corpus.vocab.len()
    );

    let scfg = cfg.scorer_config(seed)?;
    let (scorer, report) = train_scorer(&corpus, &scfg)?;
    let out = out
        .map(|p| cfg.resolve(&p))
        .or_else(|| cfg.get_path("scorer_ckpt"))
        .unwrap_or_else(|| PathBuf::from("scorer.ckpt"));
    save_scorer(&out, &scorer, &corpus.vocab, &corpus.style_names)?;
    println!(
        "scorer: held-out accuracy {:.4} ({} train rows, {} held out), saved to {}",
        report.held_out_accuracy,
        report.train_rows,
        report.held_out_rows,
        out.display()
    );
    Ok(())
}

fn cmd_train(cfg: &FileConfig, seed: u64, out: Option<PathBuf>, resume: bool) -> Result<()> {
    let data = require_path(cfg, "train_data")?;
    let ckpt_path = out
        .map(|p| cfg.resolve(&p))
        .or_else(|| cfg.get_path("model_ckpt"))
        .unwrap_or_else(|| PathBuf::from("model.ckpt"));

    let (mut model, state) = if resume {
        let (model, state) = load_model(&ckpt_path)?;
        if state.is_none() {
            return Err(Error::Checkpoint(
                "checkpoint has no trainer state to resume from".into(),
            ));
        }
        println!(
            "resuming from {} at step {}",
            ckpt_path.display(),
            state.as_ref().map_or(0, |s| s.step)
        );
        (model, state)
    } else {
        let scorer_path = require_path(cfg, "scorer_ckpt")?;
        let (scorer, vocab, style_names) = load_scorer(&scorer_path)?;
        let model = Model::new(cfg.model_config()?, vocab, style_names, scorer, seed)?;
        (model, None)
    };

    let corpus = Corpus::load_with_vocab(&data, load_options(cfg)?, &model.vocab)?;

    let mix_rows = match cfg.get_path("aug_corpus") {
        Some(path) => {
            let aug = Corpus::load_with_vocab(&path, load_options(cfg)?, &model.vocab)?;
            aug.rows
        }
        None => Vec::new(),
    };

    let steps = cfg.get_u64("steps", 0)?;
    let tcfg = TrainConfig {
        lr: cfg.get_f64("lr", 1e-3)?,
        batch: cfg.get_usize("batch", 32)?,
        epochs: cfg.get_usize("epochs", 10)?,
        steps: if steps > 0 { Some(steps) } else { None },
        weights: cfg.loss_weights()?,
        seed,
        checkpoint_every: cfg.get_u64("checkpoint_every", 0)?,
        checkpoint_path: Some(ckpt_path.clone()),
        metrics_path: Some(
            cfg.get_path("metrics_csv")
                .unwrap_or_else(|| PathBuf::from("metrics.csv")),
        ),
        checks: cfg.checks()?,
        mix_rows,
        mix_ratio: cfg.get_f64("aug_mix_ratio", 0.25)?,
    };
    let (metrics, state) = train(&mut model, &corpus, &tcfg, state)?;
    if let Some(last) = metrics.last() {
        println!(
            "trained to step {}: total {:.4} (self {:.4}, cycle {:.4}, content {:.4}, style {:.4})",
            state.step,
            last.loss.total,
            last.loss.self_loss,
            last.loss.cycle_loss,
            last.loss.content_loss,
            last.loss.style_loss
        );
    }
    println!("checkpoint written to {}", ckpt_path.display());
    Ok(())
}

fn parse_target(raw: &str, model: &Model) -> Result<Option<usize>> {
    match raw {
        "opposite" => Ok(None),
        "negative" | "0" => Ok(Some(0)),
        "positive" | "1" => Ok(Some(1)),
        other => {
            if let Some(id) = model.style_names.iter().position(|n| n == other) {
                Ok(Some(id))
            } else {
                Err(Error::Config(format!("unknown target style {other:?}")))
            }
        }
    }
}

fn cmd_transfer(
    cfg: &FileConfig,
    input: &Path,
    target_style: &str,
    keep_style: bool,
    out: Option<PathBuf>,
) -> Result<()> {
    let model = load_model_from_cfg(cfg)?;
    let corpus = Corpus::load_with_vocab(input, load_options(cfg)?, &model.vocab)?;
    let fixed_target = parse_target(target_style, &model)?;

    let mut records = Vec::with_capacity(corpus.rows.len());
    for seq in &corpus.rows {
        let record = if keep_style {
            reconstruct_exact(&model, seq)?
        } else {
            let target = StyleId(fixed_target.unwrap_or_else(|| model.opposite_style(seq.label.0)));
            transfer(&model, seq, target)?
        };
        records.push(record);
    }
    let out = out.unwrap_or_else(|| PathBuf::from("transfer.tsv"));
    write_transfer_output(&out, &records, &model.vocab)?;
    println!("{} rows transferred to {}", records.len(), out.display());
    Ok(())
}

fn cmd_augment(cfg: &FileConfig, seed: u64, input: &Path, out: Option<PathBuf>) -> Result<()> {
    let model = load_model_from_cfg(cfg)?;
    let corpus = Corpus::load_with_vocab(input, load_options(cfg)?, &model.vocab)?;
    let pcfg = PerturbationConfig {
        epsilon: cfg.get_f64("aug_epsilon", 0.1)?,
        n: cfg.get_usize("aug_n", 1)?,
        seed,
        content_only: cfg.get_bool("aug_content_only", false)?,
    };
    let records = augment_corpus(&model, &corpus, &pcfg)?;
    let out = out.unwrap_or_else(|| PathBuf::from("augmented.tsv"));
    let mut sidecar = out.clone();
    sidecar.set_extension("sidecar.csv");
    write_augmented_tsv(&out, &records, &model)?;
    write_augment_sidecar(&sidecar, &records)?;

    let preserved = records.iter().filter(|r| r.label_preserved).count();
    let degenerate = records.iter().filter(|r| r.degenerate).count();
    println!(
        "{} variants written to {} (label preserved {:.1}%, {} degenerate), sidecar {}",
        records.len(),
        out.display(),
        100.0 * preserved as f64 / records.len().max(1) as f64,
        degenerate,
        sidecar.display()
    );
    Ok(())
}

fn cmd_eval(
    cfg: &FileConfig,
    threads: usize,
    outputs: &Path,
    references: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let scorer_path = require_path(cfg, "eval_scorer_ckpt")?;
    let (scorer, vocab, _) = load_scorer(&scorer_path)?;
    let train_data = require_path(cfg, "train_data")?;
    let lm_corpus = Corpus::load_with_vocab(&train_data, load_options(cfg)?, &vocab)?;
    let lm = NGramLm::train(&lm_corpus, &cfg.lm_config()?)?;

    let lines = read_transfer_output(outputs)?;
    let refs = references.map(|p| read_references(&p)).transpose()?;
    let report = evaluate_threaded(&lines, &scorer, &vocab, &lm, refs.as_deref(), threads)?;
    print!("{}", render_report(&report));
    if let Some(path) = out {
        write_report(&path, &report)?;
    }
    Ok(())
}
