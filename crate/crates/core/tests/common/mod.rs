//! Oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use slnmt::autodiff::Tape;
use slnmt::nmt::model::{teacher_forced, Bound};
use slnmt::nmt::{ModelConfig, Seq2Seq};
use slnmt::tensor::Tensor;

/// Spread weights beyond the ±0.1 init so outputs are far from uniform.
pub fn scaled(mut m: Seq2Seq<f64>, factor: f64) -> Seq2Seq<f64> {
    for (_, t) in m.params.iter_mut() {
        for v in t.values_mut() {
            *v *= factor;
        }
    }
    m
}

/// Energies, weights and context evaluated one scalar at a time.
pub fn attention_oracle(m: &Seq2Seq<f64>, source: &[usize], s: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let ann = m.encode(source).unwrap();
    let d = ann.shape()[1];
    let t = source.len();
    let w = m.params.get("att.w").unwrap();
    let u = m.params.get("att.u").unwrap();
    let v = m.params.get("att.v").unwrap();
    let a = w.shape()[1];
    let mut energies = vec![0.0; t];
    for j in 0..t {
        let mut e = 0.0;
        for q in 0..a {
            let mut pre = 0.0;
            for (k, sk) in s.iter().enumerate() {
                pre += sk * w.values()[k * a + q];
            }
            for r in 0..d {
                pre += ann.values()[j * d + r] * u.values()[r * a + q];
            }
            e += v.values()[q] * pre.tanh();
        }
        energies[j] = e;
    }
    let max = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = energies.iter().map(|e| (e - max).exp()).sum();
    let alpha: Vec<f64> = energies.iter().map(|e| (e - max).exp() / z).collect();
    let mut ctx = vec![0.0; d];
    for j in 0..t {
        for r in 0..d {
            ctx[r] += alpha[j] * ann.values()[j * d + r];
        }
    }
    (ctx, alpha)
}

fn analytic_grads(m: &Seq2Seq<f64>, srcs: &[Vec<usize>], tgts: &[Vec<usize>]) -> Vec<(String, Tensor<f64>)> {
    let mut tape = Tape::new();
    let w = Bound::bind(&mut tape, &m.config, &m.params, true).unwrap();
    let f = teacher_forced::<f64, ChaCha8Rng>(&mut tape, &w, &m.config, srcs, tgts, &mut None).unwrap();
    let g = tape.backward(f.loss).unwrap();
    w.vars.iter().map(|(n, v)| (n.clone(), g.get(*v))).collect()
}

/// Per-block relative error `|a - n| / max(|a|, |n|)` of analytic against
/// central-difference gradients of the summed loss.
pub fn gradient_errors(m: &Seq2Seq<f64>, srcs: &[Vec<usize>], tgts: &[Vec<usize>], h: f64) -> Vec<(String, f64)> {
    let grads = analytic_grads(m, srcs, tgts);
    let mut out = Vec::new();
    for (name, g) in &grads {
        let mut diff2 = 0.0;
        let mut norm_a = 0.0;
        let mut norm_n = 0.0;
        for i in 0..g.len() {
            let mut plus = m.clone();
            plus.params.get_mut(name).unwrap().values_mut()[i] += h;
            let mut minus = m.clone();
            minus.params.get_mut(name).unwrap().values_mut()[i] -= h;
            let num = (plus.loss(srcs, tgts).unwrap() - minus.loss(srcs, tgts).unwrap()) / (2.0 * h);
            let ana = g.values()[i];
            diff2 += (num - ana) * (num - ana);
            norm_a += ana * ana;
            norm_n += num * num;
        }
        out.push((name.clone(), diff2.sqrt() / norm_a.sqrt().max(norm_n.sqrt()).max(1e-8)));
    }
    out
}

/// The gradient-check model: small, with sharpened weights so every block carries signal.
pub fn gradient_check_model() -> (Seq2Seq<f64>, Vec<Vec<usize>>, Vec<Vec<usize>>) {
    use rand::SeedableRng;
    let cfg = ModelConfig { embedding: 4, hidden: 6, attention: 5, dropout: 0.0, ..ModelConfig::new(9, 8) };
    let mut m = scaled(Seq2Seq::init(cfg, &mut ChaCha8Rng::seed_from_u64(6)).unwrap(), 3.0);
    // sharpen attention so its parameters carry a measurable gradient
    for (name, f) in [("att.u", 8.0), ("att.v", 8.0), ("att.w", 3.0)] {
        for v in m.params.get_mut(name).unwrap().values_mut() {
            *v *= f;
        }
    }
    (m, vec![vec![4, 5, 6, 7], vec![8, 5]], vec![vec![5, 6, 4], vec![7, 7]])
}

/// Random corpus over a five-word alphabet; sentences may be empty.
pub fn random_corpus(rng: &mut ChaCha8Rng, max_sentences: usize) -> Vec<String> {
    let words = ["a", "b", "c", "d", "e"];
    let n = rng.gen_range(1..=max_sentences);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(0..7);
            (0..len).map(|_| words[rng.gen_range(0..words.len())]).collect::<Vec<_>>().join(" ")
        })
        .collect()
}

fn grams(s: &str, n_max: usize) -> BTreeSet<String> {
    let toks: Vec<&str> = s.split_whitespace().collect();
    let mut out = BTreeSet::new();
    for n in 1..=n_max {
        for w in toks.windows(n) {
            out.insert(w.join(" "));
        }
    }
    out
}

/// Full rescoring of every remaining sentence at every step.
pub fn brute_force(corpus: &[String], test: &[String], n_max: usize, decay: f64) -> Vec<(usize, f64)> {
    let mut weight: HashMap<String, f64> = HashMap::new();
    for t in test {
        for g in grams(t, n_max) {
            weight.insert(g, 1.0);
        }
    }
    let feats: Vec<BTreeSet<String>> = corpus.iter().map(|s| grams(s, n_max)).collect();
    let mut left: Vec<usize> = (0..corpus.len()).collect();
    let mut out = Vec::new();
    while !left.is_empty() {
        let mut best: Option<(usize, f64)> = None;
        for (pos, &i) in left.iter().enumerate() {
            let len = corpus[i].split_whitespace().count();
            let score = if len == 0 {
                0.0
            } else {
                feats[i].iter().filter_map(|g| weight.get(g)).fold(0.0, |a, b| a + b) / len as f64
            };
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((pos, score));
            }
        }
        let (pos, score) = best.unwrap();
        let i = left.remove(pos);
        for g in &feats[i] {
            if let Some(w) = weight.get_mut(g) {
                *w *= decay;
            }
        }
        out.push((i, score));
    }
    out
}

/// A small, easy toy task that trains to useful quality in a few hundred steps.
pub fn small_toy() -> slnmt::pipeline::Datasets {
    let c = slnmt::toy::generate(&slnmt::toy::ToyConfig {
        seed: 1,
        words_per_domain: 12,
        authentic: 150,
        monolingual: 300,
        dev: 30,
        test: 30,
        authentic_in_domain: 0.9,
        monolingual_in_domain: 0.5,
        min_len: 2,
        max_len: 5,
        noise: 0.15,
        zipf: 1.0,
    });
    slnmt::pipeline::Datasets {
        train_src: c.train_src,
        train_tgt: c.train_tgt,
        mono: c.mono_src,
        dev_src: c.dev_src,
        dev_tgt: c.dev_tgt,
        test_src: c.test_src,
        test_tgt: c.test_tgt,
    }
}
