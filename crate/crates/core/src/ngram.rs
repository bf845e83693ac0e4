//! N-gram language model with interpolated absolute discounting, for the
//! fluency (perplexity) metric. Order 5 by default, discount 0.75; the
//! unigram base is add-one smoothed over the full vocabulary so every token
//! — including `<unk>` — has positive mass.

use std::collections::HashMap;

use crate::data::{Corpus, TokenSequence, BOS, EOS, PAD};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
struct ContextStat {
    total: usize,
    continuations: HashMap<u32, usize>,
}

#[derive(Debug, Clone)]
pub struct LmConfig {
    pub order: usize,
    pub discount: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            order: 5,
            discount: 0.75,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NGramLm {
    order: usize,
    discount: f64,
    vocab_len: usize,
    /// Context tables per history length 1..order−1; unigram totals apart.
    contexts: Vec<HashMap<Vec<u32>, ContextStat>>,
    unigrams: HashMap<u32, usize>,
    token_total: usize,
}

fn framed(seq: &TokenSequence) -> Vec<u32> {
    let mut ids: Vec<u32> = seq
        .ids
        .iter()
        .zip(&seq.mask)
        .filter(|(_, &real)| real)
        .map(|(&id, _)| id)
        .filter(|&id| id != PAD)
        .collect();
    if ids.first() != Some(&BOS) {
        ids.insert(0, BOS);
    }
    if ids.last() != Some(&EOS) {
        ids.push(EOS);
    }
    ids
}

impl NGramLm {
    pub fn order(&self) -> usize {
        self.order
    }

    /// Count n-grams of every order over the corpus rows.
    pub fn train(corpus: &Corpus, cfg: &LmConfig) -> Result<NGramLm> {
        if corpus.rows.is_empty() {
            return Err(Error::Data("language model needs a nonempty corpus".into()));
        }
        if cfg.order < 1 {
            return Err(Error::Config("lm order must be at least 1".into()));
        }
        if !(0.0 < cfg.discount && cfg.discount < 1.0) {
            return Err(Error::Config(format!(
                "absolute discount must be in (0,1), got {}",
                cfg.discount
            )));
        }
        let mut lm = NGramLm {
            order: cfg.order,
            discount: cfg.discount,
            vocab_len: corpus.vocab.len(),
            contexts: vec![HashMap::new(); cfg.order.saturating_sub(1)],
            unigrams: HashMap::new(),
            token_total: 0,
        };
        for row in &corpus.rows {
            let ids = framed(row);
            for (pos, &token) in ids.iter().enumerate() {
                if pos == 0 {
                    continue; // BOS is context only.
                }
                *lm.unigrams.entry(token).or_insert(0) += 1;
                lm.token_total += 1;
                for hist in 1..cfg.order {
                    if pos < hist {
                        break;
                    }
                    let ctx = ids[pos - hist..pos].to_vec();
                    let stat = lm.contexts[hist - 1].entry(ctx).or_insert(ContextStat {
                        total: 0,
                        continuations: HashMap::new(),
                    });
                    stat.total += 1;
                    *stat.continuations.entry(token).or_insert(0) += 1;
                }
            }
        }
        Ok(lm)
    }

    /// Add-one smoothed unigram base distribution.
    fn unigram_prob(&self, token: u32) -> f64 {
        let c = *self.unigrams.get(&token).unwrap_or(&0);
        (c as f64 + 1.0) / (self.token_total as f64 + self.vocab_len as f64)
    }

    /// Interpolated absolute discounting:
    /// `P(w|ctx) = max(c−d,0)/c(ctx) + d·N₁₊(ctx)/c(ctx) · P(w|ctx′)`.
    pub fn prob(&self, context: &[u32], token: u32) -> f64 {
        let hist = context.len().min(self.order - 1);
        let context = &context[context.len() - hist..];
        self.prob_backoff(context, token)
    }

    fn prob_backoff(&self, context: &[u32], token: u32) -> f64 {
        if context.is_empty() {
            return self.unigram_prob(token);
        }
        let stat = self.contexts[context.len() - 1].get(context);
        match stat {
            None => self.prob_backoff(&context[1..], token),
            Some(stat) => {
                let c = stat.total as f64;
                let count = *stat.continuations.get(&token).unwrap_or(&0) as f64;
                let discounted = (count - self.discount).max(0.0) / c;
                let lambda = self.discount * stat.continuations.len() as f64 / c;
                discounted + lambda * self.prob_backoff(&context[1..], token)
            }
        }
    }

    /// Log-probability of a sequence (every token after BOS, including EOS).
    pub fn sentence_log_prob(&self, seq: &TokenSequence) -> (f64, usize) {
        let ids = framed(seq);
        let mut logp = 0.0;
        let mut tokens = 0;
        for pos in 1..ids.len() {
            let lo = pos.saturating_sub(self.order - 1);
            logp += self.prob(&ids[lo..pos], ids[pos]).ln();
            tokens += 1;
        }
        (logp, tokens)
    }
}

/// Corpus perplexity: `exp(−mean log p per token)`. Rows with no content
/// tokens are skipped and counted.
pub struct PerplexityReport {
    pub perplexity: f64,
    pub tokens: usize,
    pub skipped_rows: usize,
}

pub fn perplexity(lm: &NGramLm, rows: &[TokenSequence]) -> Result<PerplexityReport> {
    let mut logp = 0.0;
    let mut tokens = 0usize;
    let mut skipped = 0usize;
    for row in rows {
        let framed_len = framed(row).len();
        if framed_len <= 2 {
            // BOS/EOS only: nothing to predict but the frame itself.
            skipped += 1;
            continue;
        }
        let (lp, n) = lm.sentence_log_prob(row);
        logp += lp;
        tokens += n;
    }
    if tokens == 0 {
        return Err(Error::Data("perplexity: no scorable tokens".into()));
    }
    Ok(PerplexityReport {
        perplexity: (-logp / tokens as f64).exp(),
        tokens,
        skipped_rows: skipped,
    })
}
