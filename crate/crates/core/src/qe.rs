//! Sentence-level quality estimation from decoder confidence.
//!
//! A synthetic pair is scored by force-decoding its target under the model
//! that produced it; the confidence is the mean per-token log-probability
//! (nats per token, EOS included).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nmt::Seq2Seq;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredTranslation {
    /// Position in the candidate list.
    pub index: usize,
    pub source: Vec<usize>,
    pub target: Vec<usize>,
    pub logprobs: Vec<f64>,
    pub confidence: f64,
}

impl ScoredTranslation {
    pub fn from_logprobs(index: usize, source: Vec<usize>, target: Vec<usize>, logprobs: Vec<f64>) -> Result<Self> {
        if logprobs.is_empty() {
            return Err(Error::Input("cannot score a translation without tokens".into()));
        }
        let confidence = logprobs.iter().sum::<f64>() / logprobs.len() as f64;
        Ok(ScoredTranslation { index, source, target, logprobs, confidence })
    }
}

/// Pluggable sentence-level scorer: per-token log-probabilities of `target` given `source`.
pub trait QualityEstimator: Sync {
    fn token_logprobs(&self, sources: &[Vec<usize>], targets: &[Vec<usize>]) -> Result<Vec<Vec<f64>>>;
}

/// Forced-decode confidence of a translation model.
pub struct ModelConfidence<'a, T: Scalar> {
    pub model: &'a Seq2Seq<T>,
}

impl<T: Scalar> QualityEstimator for ModelConfidence<'_, T> {
    fn token_logprobs(&self, sources: &[Vec<usize>], targets: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        let lp = self.model.forced_logprobs_batch(sources, targets)?;
        Ok(lp.into_iter().map(|v| v.into_iter().map(Scalar::to_f64_lossy).collect()).collect())
    }
}

/// Score a single pair. The target must hold at least one token besides EOS.
pub fn score_pair<Q: QualityEstimator>(qe: &Q, index: usize, source: &[usize], target: &[usize]) -> Result<ScoredTranslation> {
    if target.is_empty() {
        return Err(Error::Input(format!("candidate {index} has an empty target")));
    }
    let lp = qe.token_logprobs(&[source.to_vec()], &[target.to_vec()])?.pop().unwrap();
    ScoredTranslation::from_logprobs(index, source.to_vec(), target.to_vec(), lp)
}

/// Score candidates in batches; results follow input order. Empty targets are rejected.
pub fn score_all<Q: QualityEstimator>(qe: &Q, pairs: &[(Vec<usize>, Vec<usize>)], batch: usize) -> Result<Vec<ScoredTranslation>> {
    if let Some(i) = pairs.iter().position(|(_, t)| t.is_empty()) {
        return Err(Error::Input(format!("candidate {i} has an empty target")));
    }
    let batch = batch.max(1);
    let chunks: Vec<Result<Vec<ScoredTranslation>>> = pairs
        .par_chunks(batch)
        .enumerate()
        .map(|(c, chunk)| {
            let srcs: Vec<Vec<usize>> = chunk.iter().map(|p| p.0.clone()).collect();
            let tgts: Vec<Vec<usize>> = chunk.iter().map(|p| p.1.clone()).collect();
            let lps = qe.token_logprobs(&srcs, &tgts)?;
            chunk
                .iter()
                .zip(lps)
                .enumerate()
                .map(|(k, ((s, t), lp))| ScoredTranslation::from_logprobs(c * batch + k, s.clone(), t.clone(), lp))
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(pairs.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Indices of the `m` most confident candidates, ties to the lower index, in original order.
pub fn select_best_indices(confidences: &[f64], m: usize) -> Result<Vec<usize>> {
    if m == 0 || m > confidences.len() {
        return Err(Error::Input(format!("cannot keep {m} of {} candidates", confidences.len())));
    }
    let mut order: Vec<usize> = (0..confidences.len()).collect();
    order.sort_by(|&a, &b| confidences[b].total_cmp(&confidences[a]).then(a.cmp(&b)));
    let mut keep = order[..m].to_vec();
    keep.sort_unstable();
    Ok(keep)
}

/// The `m` most confident pairs, in their original relative order.
pub fn select_best(pairs: &[ScoredTranslation], m: usize) -> Result<Vec<ScoredTranslation>> {
    let conf: Vec<f64> = pairs.iter().map(|p| p.confidence).collect();
    Ok(select_best_indices(&conf, m)?.into_iter().map(|i| pairs[i].clone()).collect())
}

/// Audit TSV `index<TAB>confidence<TAB>target`.
pub fn scores_tsv(pairs: &[ScoredTranslation], targets: &[String]) -> String {
    let mut s = String::new();
    for (p, t) in pairs.iter().zip(targets) {
        writeln!(s, "{}\t{:?}\t{}", p.index, p.confidence, t).unwrap();
    }
    s
}

pub fn save_scores(path: &Path, pairs: &[ScoredTranslation], targets: &[String]) -> Result<()> {
    fs::write(path, scores_tsv(pairs, targets)).map_err(|e| Error::io(path, e))
}
