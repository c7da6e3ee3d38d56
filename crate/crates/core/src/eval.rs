//! Corpus BLEU, dev-set evaluation and the training stop rule.

use std::collections::HashMap;

use serde::Serialize;

use crate::bpe::debpe;
use crate::error::{Error, Result};
use crate::nmt::{DecodeMode, Seq2Seq};
use crate::scalar::Scalar;
use crate::vocab::Vocabulary;

pub const MAX_ORDER: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BleuReport {
    /// Clipped precisions `p_1..p_4`, after smoothing.
    pub precisions: [f64; MAX_ORDER],
    /// Orders whose zero match count was add-one smoothed.
    pub smoothed: [bool; MAX_ORDER],
    pub brevity_penalty: f64,
    pub score: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngram_counts<'a, 'b>(tokens: &'b [&'a str], n: usize) -> HashMap<&'b [&'a str], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_default() += 1;
        }
    }
    m
}

/// Corpus-level BLEU over whitespace tokens, case-sensitive.
///
/// Matches are clipped by reference counts and summed over the corpus.
/// A zero match count at order 2 or above is replaced by
/// `1 / (total + 1)`; a zero unigram match count gives a score of 0.
pub fn corpus_bleu<H: AsRef<str>, R: AsRef<str>>(hypotheses: &[H], references: &[R]) -> Result<BleuReport> {
    if hypotheses.len() != references.len() {
        return Err(Error::Input(format!(
            "{} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if hypotheses.is_empty() {
        return Err(Error::Input("BLEU needs at least one pair".into()));
    }
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (h, r) in hypotheses.iter().zip(references) {
        let ht: Vec<&str> = h.as_ref().split_whitespace().collect();
        let rt: Vec<&str> = r.as_ref().split_whitespace().collect();
        hyp_len += ht.len();
        ref_len += rt.len();
        for n in 1..=MAX_ORDER {
            let hc = ngram_counts(&ht, n);
            let rc = ngram_counts(&rt, n);
            totals[n - 1] += ht.len().saturating_sub(n - 1);
            matches[n - 1] += hc.iter().map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0))).sum::<usize>();
        }
    }
    let mut precisions = [0.0; MAX_ORDER];
    let mut smoothed = [false; MAX_ORDER];
    for n in 0..MAX_ORDER {
        precisions[n] = if matches[n] == 0 && n > 0 {
            smoothed[n] = true;
            1.0 / (totals[n] as f64 + 1.0)
        } else if totals[n] == 0 {
            0.0
        } else {
            matches[n] as f64 / totals[n] as f64
        };
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let score = if precisions[0] == 0.0 || brevity_penalty == 0.0 {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        (100.0 * brevity_penalty * log_mean.exp()).min(100.0)
    };
    Ok(BleuReport { precisions, smoothed, brevity_penalty, score, hyp_len, ref_len })
}

/// Dev/test evaluation record.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRecord {
    pub step: u64,
    pub bleu: f64,
    pub precisions: [f64; MAX_ORDER],
    pub bp: f64,
}

impl EvalRecord {
    pub fn new(step: u64, report: &BleuReport) -> Self {
        EvalRecord { step, bleu: report.score, precisions: report.precisions, bp: report.brevity_penalty }
    }

    /// One JSON object on a single line.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("plain numbers serialize")
    }
}

/// Translate every source, undo subwords and score against raw references.
pub fn evaluate_model<T: Scalar, R: AsRef<str>>(
    model: &Seq2Seq<T>,
    sources: &[Vec<usize>],
    references: &[R],
    target_vocab: &Vocabulary,
    mode: DecodeMode,
) -> Result<BleuReport> {
    if sources.is_empty() {
        return Err(Error::Input("empty evaluation set".into()));
    }
    let hyps = model.translate_all(sources, mode, 64)?;
    let text: Vec<String> = hyps.iter().map(|h| debpe(&target_vocab.decode(h.content()))).collect();
    corpus_bleu(&text, references)
}

/// Dev-BLEU history driving early stopping.
#[derive(Clone, Debug, PartialEq)]
pub struct StopState {
    pub history: Vec<(u64, f64)>,
    pub threshold: f64,
    pub window: usize,
}

impl StopState {
    pub fn new(threshold: f64, window: usize) -> Self {
        StopState { history: Vec::new(), threshold, window }
    }

    pub fn record(&mut self, step: u64, bleu: f64) -> Result<()> {
        if let Some(&(last, _)) = self.history.last() {
            if step <= last {
                return Err(Error::Contract(format!("evaluation step {step} does not follow {last}")));
            }
        }
        self.history.push((step, bleu));
        Ok(())
    }

    pub fn should_stop(&self) -> bool {
        should_stop(&self.history.iter().map(|&(_, b)| b).collect::<Vec<_>>(), self.window, self.threshold)
    }
}

/// True once the best of the last `window` scores fails to beat the best earlier score by `threshold`.
pub fn should_stop(history: &[f64], window: usize, threshold: f64) -> bool {
    if window == 0 || history.len() < window + 1 {
        return false;
    }
    let split = history.len() - window;
    let fold = |xs: &[f64]| xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    fold(&history[split..]) - fold(&history[..split]) < threshold
}
