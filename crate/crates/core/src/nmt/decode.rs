//! Greedy and beam-search decoding.

use rayon::prelude::*;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::log_softmax_row;
use crate::vocab::{BOS, EOS};

use super::model::{decoder_step, encode, initial_state, Bound, Seq2Seq};

type NoRng = rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Beam(usize),
}

/// Decoder output: tokens (ending in EOS unless the length limit hit first) with their log-probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis<T: Scalar> {
    pub tokens: Vec<usize>,
    pub logprobs: Vec<T>,
    pub score: T,
}

impl<T: Scalar> Hypothesis<T> {
    fn from_parts(tokens: Vec<usize>, logprobs: Vec<T>) -> Self {
        let score = logprobs.iter().copied().sum();
        Hypothesis { tokens, logprobs, score }
    }

    /// Tokens without the trailing EOS.
    pub fn content(&self) -> &[usize] {
        match self.tokens.last() {
            Some(&EOS) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }

    /// Score divided by token count.
    pub fn normalized_score(&self) -> T {
        self.score / T::from_usize(self.tokens.len().max(1)).unwrap()
    }
}

/// Index of the largest value; the lowest index wins ties.
fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl<T: Scalar> Seq2Seq<T> {
    pub fn translate(&self, source: &[usize], mode: DecodeMode) -> Result<Hypothesis<T>> {
        match mode {
            DecodeMode::Greedy => Ok(self.greedy_batch(&[source.to_vec()])?.pop().unwrap()),
            DecodeMode::Beam(width) => self.beam(source, width),
        }
    }

    /// Translate many sentences; output order equals input order.
    pub fn translate_all(&self, sources: &[Vec<usize>], mode: DecodeMode, batch: usize) -> Result<Vec<Hypothesis<T>>> {
        let batch = batch.max(1);
        let chunks: Vec<Result<Vec<Hypothesis<T>>>> = sources
            .par_chunks(batch)
            .map(|chunk| match mode {
                DecodeMode::Greedy => self.greedy_batch(chunk),
                DecodeMode::Beam(width) => chunk.iter().map(|s| self.beam(s, width)).collect(),
            })
            .collect();
        let mut out = Vec::with_capacity(sources.len());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }

    /// Greedy decoding of a batch; finished rows keep stepping but are ignored.
    pub fn greedy_batch(&self, sources: &[Vec<usize>]) -> Result<Vec<Hypothesis<T>>> {
        for s in sources {
            self.check_source(s)?;
        }
        let cfg = &self.config;
        let mut tape = Tape::new();
        let w = Bound::bind(&mut tape, cfg, &self.params, false)?;
        let enc = encode::<T, NoRng>(&mut tape, &w, cfg, sources, &mut None)?;
        let mut state = initial_state(&mut tape, &w, cfg, &enc)?;
        let limits: Vec<usize> = sources.iter().map(|s| cfg.decode_limit(s.len())).collect();
        let horizon = *limits.iter().max().unwrap();
        let mut tokens: Vec<Vec<usize>> = vec![Vec::new(); sources.len()];
        let mut logps: Vec<Vec<T>> = vec![Vec::new(); sources.len()];
        let mut done = vec![false; sources.len()];
        let mut prev = vec![BOS; sources.len()];
        let mut row = vec![T::zero(); cfg.tgt_vocab];
        for _ in 0..horizon {
            let step = decoder_step::<T, NoRng>(&mut tape, &w, cfg, &enc, &prev, &state, &mut None)?;
            let lv = tape.value(step.logits).values();
            for b in 0..sources.len() {
                if done[b] {
                    continue;
                }
                log_softmax_row(&lv[b * cfg.tgt_vocab..(b + 1) * cfg.tgt_vocab], &mut row);
                let y = argmax(&row);
                tokens[b].push(y);
                logps[b].push(row[y]);
                prev[b] = y;
                if y == EOS || tokens[b].len() >= limits[b] {
                    done[b] = true;
                }
            }
            if done.iter().all(|&d| d) {
                break;
            }
            state = step.state;
        }
        Ok(tokens.into_iter().zip(logps).map(|(t, l)| Hypothesis::from_parts(t, l)).collect())
    }

    /// Beam search over summed log-probabilities.
    ///
    /// Each step keeps the `width` best extensions; extensions ending in EOS or
    /// reaching the length limit are set aside as finished. The final choice is
    /// the finished hypothesis with the best length-normalized score.
    pub fn beam(&self, source: &[usize], width: usize) -> Result<Hypothesis<T>> {
        if width == 0 {
            return Err(Error::Config("beam width must be positive".into()));
        }
        self.check_source(source)?;
        let cfg = &self.config;
        let limit = cfg.decode_limit(source.len());
        let mut tape = Tape::new();
        let w = Bound::bind(&mut tape, cfg, &self.params, false)?;
        let enc0 = encode::<T, NoRng>(&mut tape, &w, cfg, &[source.to_vec()], &mut None)?;
        let mut state = initial_state(&mut tape, &w, cfg, &enc0)?;
        let mut enc = enc0.clone();

        struct Live<T> {
            tokens: Vec<usize>,
            logprobs: Vec<T>,
            score: T,
        }
        let mut live = vec![Live { tokens: Vec::new(), logprobs: Vec::new(), score: T::zero() }];
        let mut finished: Vec<Hypothesis<T>> = Vec::new();
        let mut row = vec![T::zero(); cfg.tgt_vocab];

        while !live.is_empty() && finished.len() < width {
            let prev: Vec<usize> = live.iter().map(|h| h.tokens.last().copied().unwrap_or(BOS)).collect();
            let step = decoder_step::<T, NoRng>(&mut tape, &w, cfg, &enc, &prev, &state, &mut None)?;
            let lv = tape.value(step.logits).values();
            // (total, token logprob, beam, token)
            let mut cands: Vec<(T, T, usize, usize)> = Vec::with_capacity(live.len() * cfg.tgt_vocab);
            for (b, h) in live.iter().enumerate() {
                log_softmax_row(&lv[b * cfg.tgt_vocab..(b + 1) * cfg.tgt_vocab], &mut row);
                cands.extend(row.iter().enumerate().map(|(y, &lp)| (h.score + lp, lp, b, y)));
            }
            cands.sort_by(|x, y| {
                y.0.partial_cmp(&x.0)
                    .unwrap()
                    .then_with(|| y.1.partial_cmp(&x.1).unwrap())
                    .then_with(|| x.2.cmp(&y.2))
                    .then_with(|| x.3.cmp(&y.3))
            });
            cands.truncate(width);
            let mut next = Vec::new();
            let mut rows = Vec::new();
            for (total, lp, b, y) in cands {
                let mut tokens = live[b].tokens.clone();
                let mut logprobs = live[b].logprobs.clone();
                tokens.push(y);
                logprobs.push(lp);
                if y == EOS || tokens.len() >= limit {
                    finished.push(Hypothesis { tokens, logprobs, score: total });
                } else {
                    next.push(Live { tokens, logprobs, score: total });
                    rows.push(b);
                }
            }
            if !rows.is_empty() {
                state = step.state.select_rows(&mut tape, &rows)?;
                let origin = vec![0; rows.len()];
                enc = enc0.select_rows(&mut tape, &origin)?;
            }
            live = next;
        }
        let best = finished
            .into_iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.normalized_score().partial_cmp(&b.normalized_score()).unwrap().then_with(|| ib.cmp(ia)))
            .map(|(_, h)| h)
            .expect("beam always finishes at least one hypothesis");
        Ok(best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.5f64, 0.9, 0.9, 0.1]), 1);
    }

    #[test]
    fn content_strips_eos() {
        let h = Hypothesis::<f64>::from_parts(vec![5, 6, EOS], vec![-0.1, -0.2, -0.3]);
        assert_eq!(h.content(), &[5, 6]);
        assert!((h.score + 0.6).abs() < 1e-15);
    }
}
