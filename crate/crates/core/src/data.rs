//! Corpus ingestion, vocabulary, and synthetic corpus generation.
//!
//! Corpus files are UTF-8 TSV, one `label<TAB>sentence` per line, labels in
//! {0, 1} or {negative, positive}. Tokenization is whitespace splitting with
//! optional lowercasing; every sequence is wrapped in BOS/EOS.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::seed_rng;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;

pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StyleId(pub usize);

impl fmt::Display for StyleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Token ↔ id bijection with the four reserved ids pinned at the front.
#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn new() -> Vocabulary {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in RESERVED {
            v.tokens.push(t.to_string());
            v.index.insert(t.to_string(), (v.tokens.len() - 1) as u32);
        }
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Insert a token if absent; returns its id. Reserved names map to their
    /// reserved ids.
    pub fn intern(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        self.tokens.push(token.to_string());
        let id = (self.tokens.len() - 1) as u32;
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Result<&str> {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .ok_or_else(|| Error::Vocab(format!("id {id} outside vocabulary of {}", self.len())))
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Rebuild from an ordered token list (checkpoint load).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Vocabulary> {
        if tokens.len() < RESERVED.len()
            || RESERVED.iter().zip(&tokens).any(|(r, t)| r != t)
        {
            return Err(Error::Vocab(
                "token list must start with the reserved ids".to_string(),
            ));
        }
        let mut index = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Vocab(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }
}

/// One corpus row: token ids (BOS/EOS framed), style label, padding mask
/// (`true` = real token).
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub label: StyleId,
    pub mask: Vec<bool>,
}

impl TokenSequence {
    pub fn from_tokens(tokens: &[&str], label: StyleId, vocab: &mut Vocabulary) -> TokenSequence {
        let mut ids = Vec::with_capacity(tokens.len() + 2);
        ids.push(BOS);
        for t in tokens {
            ids.push(vocab.intern(t));
        }
        ids.push(EOS);
        let mask = vec![true; ids.len()];
        TokenSequence { ids, label, mask }
    }

    pub fn from_tokens_fixed_vocab(
        tokens: &[&str],
        label: StyleId,
        vocab: &Vocabulary,
    ) -> TokenSequence {
        let mut ids = Vec::with_capacity(tokens.len() + 2);
        ids.push(BOS);
        for t in tokens {
            ids.push(vocab.id_or_unk(t));
        }
        ids.push(EOS);
        let mask = vec![true; ids.len()];
        TokenSequence { ids, label, mask }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Count of non-padding positions.
    pub fn active_len(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    /// Content words only: padding, BOS and EOS stripped.
    pub fn text(&self, vocab: &Vocabulary) -> Result<String> {
        let mut words = Vec::new();
        for (&id, &real) in self.ids.iter().zip(&self.mask) {
            if !real || id == PAD || id == BOS || id == EOS {
                continue;
            }
            words.push(vocab.token(id)?.to_string());
        }
        Ok(words.join(" "))
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub rows: Vec<TokenSequence>,
    pub vocab: Vocabulary,
    pub style_names: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    pub lowercase: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { lowercase: true }
    }
}

fn parse_label(raw: &str, line_no: usize) -> Result<StyleId> {
    match raw {
        "0" | "negative" => Ok(StyleId(0)),
        "1" | "positive" => Ok(StyleId(1)),
        other => Err(Error::Data(format!(
            "line {line_no}: unknown style label {other:?}"
        ))),
    }
}

fn parse_lines(text: &str, opts: LoadOptions) -> Result<Vec<(StyleId, Vec<String>)>> {
    let mut parsed = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.is_empty() {
            continue;
        }
        let (label_raw, sentence) = line.split_once('\t').ok_or_else(|| {
            Error::Data(format!("line {line_no}: expected label<TAB>sentence"))
        })?;
        let label = parse_label(label_raw.trim(), line_no)?;
        let sentence = if opts.lowercase {
            sentence.to_lowercase()
        } else {
            sentence.to_string()
        };
        let tokens: Vec<String> = sentence.split_whitespace().map(str::to_string).collect();
        parsed.push((label, tokens));
    }
    if parsed.is_empty() {
        return Err(Error::Data("corpus file has no rows".to_string()));
    }
    Ok(parsed)
}

impl Corpus {
    pub fn style_count(&self) -> usize {
        self.style_names.len()
    }

    pub fn per_style_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.style_count()];
        for row in &self.rows {
            counts[row.label.0] += 1;
        }
        counts
    }

    /// Load a corpus and build its vocabulary from the data.
    pub fn load(path: &Path, opts: LoadOptions) -> Result<Corpus> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Corpus::from_text(&text, opts)
    }

    pub fn from_text(text: &str, opts: LoadOptions) -> Result<Corpus> {
        let parsed = parse_lines(text, opts)?;
        let mut vocab = Vocabulary::new();
        let rows = parsed
            .iter()
            .map(|(label, tokens)| {
                let refs: Vec<&str> = tokens.iter().map(String::as_str).collect();
                TokenSequence::from_tokens(&refs, *label, &mut vocab)
            })
            .collect();
        Ok(Corpus {
            rows,
            vocab,
            style_names: vec!["negative".to_string(), "positive".to_string()],
        })
    }

    /// Load against an existing vocabulary; unseen tokens map to `<unk>`.
    pub fn load_with_vocab(path: &Path, opts: LoadOptions, vocab: &Vocabulary) -> Result<Corpus> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let parsed = parse_lines(&text, opts)?;
        let rows = parsed
            .iter()
            .map(|(label, tokens)| {
                let refs: Vec<&str> = tokens.iter().map(String::as_str).collect();
                TokenSequence::from_tokens_fixed_vocab(&refs, *label, vocab)
            })
            .collect();
        Ok(Corpus {
            rows,
            vocab: vocab.clone(),
            style_names: vec!["negative".to_string(), "positive".to_string()],
        })
    }

    /// Write rows back out in the corpus TSV schema.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for row in &self.rows {
            out.push_str(&format!("{}\t{}\n", row.label.0, row.text(&self.vocab)?));
        }
        std::fs::write(path, out).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }
}

// ── Synthetic corpus ───────────────────────────────────────────────────

const POSITIVE_WORDS: [&str; 20] = [
    "great", "good", "wonderful", "amazing", "delicious", "friendly", "lovely", "perfect",
    "fantastic", "excellent", "awesome", "tasty", "charming", "pleasant", "superb",
    "delightful", "brilliant", "cozy", "fresh", "generous",
];

const NEGATIVE_WORDS: [&str; 20] = [
    "bad", "awful", "terrible", "horrible", "bland", "rude", "dirty", "boring", "mediocre",
    "stale", "cold", "slow", "greasy", "noisy", "cramped", "overpriced", "disappointing",
    "sour", "messy", "broken",
];

const BASE_NOUNS: [&str; 20] = [
    "food", "service", "staff", "place", "coffee", "burger", "pizza", "room", "movie",
    "crowd", "music", "menu", "soup", "salad", "dessert", "waiter", "bar", "patio",
    "bread", "steak",
];

const CLAUSES: [&[&str]; 8] = [
    &["last", "night"],
    &["for", "lunch"],
    &["with", "friends"],
    &["near", "downtown"],
    &["this", "weekend"],
    &["after", "work"],
    &["on", "sunday"],
    &["again"],
];

/// Templated two-style corpus whose styles are decided entirely by disjoint
/// polarity lexicons, so the Bayes-optimal classifier is exact. Every row
/// contains exactly one polarity token. Deterministic in the seed.
pub fn generate_synthetic_corpus(seed: u64, n_per_style: usize, vocab_size: usize) -> Result<Corpus> {
    if vocab_size < 50 {
        return Err(Error::contract(format!(
            "synthetic corpus needs vocab_size >= 50, got {vocab_size}"
        )));
    }
    let mut vocab = Vocabulary::new();
    for w in POSITIVE_WORDS.iter().chain(&NEGATIVE_WORDS).chain(&BASE_NOUNS) {
        vocab.intern(w);
    }
    for clause in CLAUSES {
        for w in clause {
            vocab.intern(w);
        }
    }
    for w in ["the", "was", "and", "were", "very"] {
        vocab.intern(w);
    }
    // Pad out with extra nouns until the vocabulary reaches the target.
    let mut extra_nouns: Vec<String> = Vec::new();
    let mut k = 0;
    while vocab.len() < vocab_size {
        let w = format!("dish{k}");
        vocab.intern(&w);
        extra_nouns.push(w);
        k += 1;
    }
    let nouns: Vec<String> = BASE_NOUNS
        .iter()
        .map(|s| s.to_string())
        .chain(extra_nouns)
        .collect();

    let mut rng = seed_rng(seed);
    let mut rows = Vec::with_capacity(2 * n_per_style);
    for i in 0..2 * n_per_style {
        let style = StyleId(i % 2);
        let lexicon: &[&str] = if style.0 == 0 {
            &NEGATIVE_WORDS
        } else {
            &POSITIVE_WORDS
        };
        let pol = lexicon[rng.gen_range(0..lexicon.len())];
        let noun = nouns[rng.gen_range(0..nouns.len())].clone();
        let clause = CLAUSES[rng.gen_range(0..CLAUSES.len())];
        let template = rng.gen_range(0..4u8);
        let mut words: Vec<String> = Vec::new();
        match template {
            0 => {
                words.extend(["the", &noun, "was", pol].map(str::to_string));
            }
            1 => {
                words.extend(["the", &noun, "was", pol].map(str::to_string));
                words.extend(clause.iter().map(|s| s.to_string()));
            }
            2 => {
                words.extend(clause.iter().map(|s| s.to_string()));
                words.extend(["the", &noun, "was", pol].map(str::to_string));
            }
            _ => {
                words.extend(["the", &noun, "was", "very", pol].map(str::to_string));
            }
        }
        let refs: Vec<&str> = words.iter().map(String::as_str).collect();
        rows.push(TokenSequence::from_tokens_fixed_vocab(&refs, style, &vocab));
    }

    Ok(Corpus {
        rows,
        vocab,
        style_names: vec!["negative".to_string(), "positive".to_string()],
    })
}
