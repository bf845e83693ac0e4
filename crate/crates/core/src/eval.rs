//! Automatic evaluation of transfer outputs: target-style accuracy under a
//! frozen classifier, self-/ref-BLEU, and n-gram perplexity, written as a
//! flat `key=value` report.

use std::path::Path;

use crate::bleu::bleu_sentences;
use crate::data::{TokenSequence, Vocabulary};
use crate::error::{Error, Result};
use crate::ngram::{perplexity, NGramLm};
use crate::scorer::Scorer;
use crate::transfer::TransferLine;

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rows: usize,
    pub acc: f64,
    pub self_bleu: f64,
    pub ref_bleu: Option<f64>,
    pub ppl: f64,
    pub ppl_skipped_rows: usize,
}

fn tokenize_line(sentence: &str, vocab: &Vocabulary) -> TokenSequence {
    let tokens: Vec<&str> = sentence.split_whitespace().collect();
    TokenSequence::from_tokens_fixed_vocab(&tokens, crate::data::StyleId(0), vocab)
}

/// Fraction of outputs the classifier assigns to their target label.
pub fn style_accuracy(
    lines: &[TransferLine],
    scorer: &Scorer,
    vocab: &Vocabulary,
) -> Result<f64> {
    if lines.is_empty() {
        return Err(Error::Data("style accuracy: no transfer rows".into()));
    }
    let mut hits = 0usize;
    for line in lines {
        let seq = tokenize_line(&line.output_sentence, vocab);
        if scorer.predict_label(&seq)? == line.target_label.0 {
            hits += 1;
        }
    }
    Ok(hits as f64 / lines.len() as f64)
}

fn style_accuracy_chunked(
    lines: &[TransferLine],
    scorer: &Scorer,
    vocab: &Vocabulary,
    threads: usize,
) -> Result<f64> {
    let chunk = lines.len().div_ceil(threads.max(1));
    let hits: Vec<Result<usize>> = std::thread::scope(|scope| {
        let handles: Vec<_> = lines
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    let mut hits = 0usize;
                    for line in part {
                        let seq = tokenize_line(&line.output_sentence, vocab);
                        if scorer.predict_label(&seq)? == line.target_label.0 {
                            hits += 1;
                        }
                    }
                    Ok(hits)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation worker panicked"))
            .collect()
    });
    let mut total = 0usize;
    for h in hits {
        total += h?;
    }
    Ok(total as f64 / lines.len() as f64)
}

/// One reference sentence per line, aligned with the transfer output rows.
pub fn read_references(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let refs: Vec<String> = text.lines().map(str::to_string).collect();
    if refs.is_empty() {
        return Err(Error::Data("reference file has no rows".into()));
    }
    Ok(refs)
}

pub fn evaluate(
    lines: &[TransferLine],
    scorer: &Scorer,
    vocab: &Vocabulary,
    lm: &NGramLm,
    references: Option<&[String]>,
) -> Result<EvalReport> {
    evaluate_threaded(lines, scorer, vocab, lm, references, 1)
}

/// Same evaluation with the classification step fanned out over worker
/// threads. Results are merged in line order, so the report is byte-for-byte
/// independent of the thread count.
pub fn evaluate_threaded(
    lines: &[TransferLine],
    scorer: &Scorer,
    vocab: &Vocabulary,
    lm: &NGramLm,
    references: Option<&[String]>,
    threads: usize,
) -> Result<EvalReport> {
    if lines.is_empty() {
        return Err(Error::Data("evaluation: no transfer rows".into()));
    }
    if let Some(refs) = references {
        if refs.len() != lines.len() {
            return Err(Error::Data(format!(
                "{} references for {} output rows",
                refs.len(),
                lines.len()
            )));
        }
    }

    let acc = if threads > 1 {
        style_accuracy_chunked(lines, scorer, vocab, threads)?
    } else {
        style_accuracy(lines, scorer, vocab)?
    };

    let self_bleu = lines
        .iter()
        .map(|l| bleu_sentences(&l.output_sentence, &[l.source_sentence.as_str()]))
        .sum::<f64>()
        / lines.len() as f64;

    let ref_bleu = references.map(|refs| {
        lines
            .iter()
            .zip(refs)
            .map(|(l, r)| bleu_sentences(&l.output_sentence, &[r.as_str()]))
            .sum::<f64>()
            / lines.len() as f64
    });

    let outputs: Vec<TokenSequence> = lines
        .iter()
        .map(|l| tokenize_line(&l.output_sentence, vocab))
        .collect();
    let ppl_report = perplexity(lm, &outputs)?;

    Ok(EvalReport {
        rows: lines.len(),
        acc,
        self_bleu,
        ref_bleu,
        ppl: ppl_report.perplexity,
        ppl_skipped_rows: ppl_report.skipped_rows,
    })
}

/// Flat `key=value` metrics report. Header comments pin the measurement
/// conventions so numbers are comparable across runs.
pub fn render_report(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str("# sentence BLEU, 4-gram, add-one smoothing on empty matches, brevity penalty\n");
    out.push_str("# whitespace tokenization; perplexity from the 5-gram absolute-discounting LM\n");
    out.push_str(&format!("rows={}\n", report.rows));
    out.push_str(&format!("acc={:.6}\n", report.acc));
    out.push_str(&format!("self_bleu={:.6}\n", report.self_bleu));
    if let Some(r) = report.ref_bleu {
        out.push_str(&format!("ref_bleu={r:.6}\n"));
    }
    out.push_str(&format!("ppl={:.6}\n", report.ppl));
    if report.ppl_skipped_rows > 0 {
        out.push_str(&format!("ppl_skipped_rows={}\n", report.ppl_skipped_rows));
    }
    out
}

pub fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    std::fs::write(path, render_report(report))
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}
