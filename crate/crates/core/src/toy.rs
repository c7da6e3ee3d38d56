//! Synthetic two-language task for desk-scale experiments.
//!
//! Source sentences are drawn from two disjoint lexicons: an in-domain one
//! (shared with dev and test) and an out-of-domain one. The target side is
//! the source reversed with every word replaced by its fixed translation.
//! Authentic training targets are corrupted: each token is swapped for a
//! random target word with probability `noise`. Dev and test references are
//! clean.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub struct ToyConfig {
    pub seed: u64,
    pub words_per_domain: usize,
    pub authentic: usize,
    pub monolingual: usize,
    pub dev: usize,
    pub test: usize,
    /// Share of authentic sentences drawn from the in-domain lexicon.
    pub authentic_in_domain: f64,
    /// Share of monolingual sentences drawn from the in-domain lexicon.
    pub monolingual_in_domain: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub noise: f64,
    /// Zipf exponent of word frequencies.
    pub zipf: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            seed: 1,
            words_per_domain: 45,
            authentic: 2000,
            monolingual: 16000,
            dev: 200,
            test: 200,
            authentic_in_domain: 0.3,
            monolingual_in_domain: 0.125,
            min_len: 3,
            max_len: 9,
            noise: 0.3,
            zipf: 1.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyCorpus {
    pub train_src: Vec<String>,
    pub train_tgt: Vec<String>,
    pub mono_src: Vec<String>,
    /// Whether each monolingual sentence is in-domain; kept for analysis only.
    pub mono_in_domain: Vec<bool>,
    pub dev_src: Vec<String>,
    pub dev_tgt: Vec<String>,
    pub test_src: Vec<String>,
    pub test_tgt: Vec<String>,
}

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

fn pseudo_word<R: Rng>(rng: &mut R, syllables: usize) -> String {
    (0..syllables).map(|_| format!("{}{}", ONSETS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap())).collect()
}

fn lexicon<R: Rng>(rng: &mut R, n: usize, taken: &mut std::collections::HashSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syl = rng.gen_range(1..=3);
        let w = pseudo_word(rng, syl);
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

struct Language {
    src: [Vec<String>; 2],
    tgt: [Vec<String>; 2],
    weights: WeightedIndex<f64>,
    all_tgt: Vec<String>,
}

impl Language {
    fn sentence(&self, rng: &mut ChaCha8Rng, domain: usize, cfg: &ToyConfig) -> (String, String, Vec<usize>) {
        let len = rng.gen_range(cfg.min_len..=cfg.max_len);
        let ids: Vec<usize> = (0..len).map(|_| self.weights.sample(rng)).collect();
        let src = ids.iter().map(|&i| self.src[domain][i].as_str()).collect::<Vec<_>>().join(" ");
        let tgt = ids.iter().rev().map(|&i| self.tgt[domain][i].as_str()).collect::<Vec<_>>().join(" ");
        (src, tgt, ids)
    }

    fn noisy_target(&self, clean: &str, rng: &mut ChaCha8Rng, noise: f64) -> String {
        clean
            .split(' ')
            .map(|w| if rng.gen::<f64>() < noise { self.all_tgt.choose(rng).unwrap().as_str() } else { w })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

pub fn generate(cfg: &ToyConfig) -> ToyCorpus {
    let mut lex_rng = seed::stream(cfg.seed, "toy.lexicon");
    let mut taken = std::collections::HashSet::new();
    let n = cfg.words_per_domain;
    let src = [lexicon(&mut lex_rng, n, &mut taken), lexicon(&mut lex_rng, n, &mut taken)];
    let mut taken_tgt = std::collections::HashSet::new();
    let tgt = [lexicon(&mut lex_rng, n, &mut taken_tgt), lexicon(&mut lex_rng, n, &mut taken_tgt)];
    let weights = WeightedIndex::new((1..=n).map(|r| 1.0 / (r as f64).powf(cfg.zipf))).unwrap();
    let all_tgt = tgt.iter().flatten().cloned().collect();
    let lang = Language { src, tgt, weights, all_tgt };

    let mut rng = seed::stream(cfg.seed, "toy.sentences");
    let domain = |rng: &mut ChaCha8Rng, p: f64| if rng.gen::<f64>() < p { 0 } else { 1 };

    let mut out = ToyCorpus {
        train_src: Vec::new(),
        train_tgt: Vec::new(),
        mono_src: Vec::new(),
        mono_in_domain: Vec::new(),
        dev_src: Vec::new(),
        dev_tgt: Vec::new(),
        test_src: Vec::new(),
        test_tgt: Vec::new(),
    };
    for _ in 0..cfg.authentic {
        let d = domain(&mut rng, cfg.authentic_in_domain);
        let (s, t, _) = lang.sentence(&mut rng, d, cfg);
        out.train_tgt.push(lang.noisy_target(&t, &mut rng, cfg.noise));
        out.train_src.push(s);
    }
    for _ in 0..cfg.monolingual {
        let d = domain(&mut rng, cfg.monolingual_in_domain);
        let (s, _, _) = lang.sentence(&mut rng, d, cfg);
        out.mono_src.push(s);
        out.mono_in_domain.push(d == 0);
    }
    for _ in 0..cfg.dev {
        let (s, t, _) = lang.sentence(&mut rng, 0, cfg);
        out.dev_src.push(s);
        out.dev_tgt.push(t);
    }
    for _ in 0..cfg.test {
        let (s, t, _) = lang.sentence(&mut rng, 0, cfg);
        out.test_src.push(s);
        out.test_tgt.push(t);
    }
    out
}
