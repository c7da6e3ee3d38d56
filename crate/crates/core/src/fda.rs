//! Feature-decay data selection.
//!
//! Every distinct n-gram (orders `1..=n_max`) of the test source side is a
//! feature with initial weight 1. A sentence scores the summed current
//! weight of its distinct features divided by its token count. Selection is
//! greedy: the best remaining sentence is taken (lower index on ties) and
//! each of its features is multiplied by `decay`, so later sentences gain
//! less from n-grams that are already covered.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const DEFAULT_N_MAX: usize = 3;
pub const DEFAULT_DECAY: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct Feature {
    pub initial: f64,
    pub selected: u32,
    current: f64,
}

impl Feature {
    pub fn weight(&self) -> f64 {
        self.current
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    n_max: usize,
    features: HashMap<String, Feature>,
}

/// Distinct n-grams of orders `1..=n_max`, sorted.
pub fn sentence_ngrams(sentence: &str, n_max: usize) -> Vec<String> {
    let toks: Vec<&str> = sentence.split_whitespace().collect();
    let mut grams: Vec<String> = (1..=n_max)
        .flat_map(|n| toks.windows(n).map(|w| w.join(" ")).collect::<Vec<_>>())
        .collect();
    grams.sort();
    grams.dedup();
    grams
}

impl FeatureTable {
    /// Features from the source side of the test set.
    pub fn extract<S: AsRef<str>>(test_sources: &[S], n_max: usize) -> Result<Self> {
        if n_max == 0 {
            return Err(Error::Config("n_max must be at least 1".into()));
        }
        if test_sources.is_empty() {
            return Err(Error::Input("feature extraction needs at least one test sentence".into()));
        }
        let mut features = HashMap::new();
        for s in test_sources {
            for g in sentence_ngrams(s.as_ref(), n_max) {
                features.entry(g).or_insert(Feature { initial: 1.0, selected: 0, current: 1.0 });
            }
        }
        Ok(FeatureTable { n_max, features })
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn get(&self, gram: &str) -> Option<&Feature> {
        self.features.get(gram)
    }

    fn decay(&mut self, gram: &str, factor: f64) {
        if let Some(f) = self.features.get_mut(gram) {
            f.selected += 1;
            f.current *= factor;
        }
    }
}

/// Current score of a sentence; 0 for an empty sentence.
pub fn score_sentence(sentence: &str, table: &FeatureTable) -> f64 {
    let len = sentence.split_whitespace().count();
    if len == 0 {
        return 0.0;
    }
    score_grams(&sentence_ngrams(sentence, table.n_max), len, table)
}

fn score_grams(grams: &[String], len: usize, table: &FeatureTable) -> f64 {
    if len == 0 {
        return 0.0;
    }
    let total: f64 = grams.iter().filter_map(|g| table.features.get(g)).map(Feature::weight).fold(0.0, |a, b| a + b);
    total / len as f64
}

/// Greedy selection order with the score each sentence had when picked.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionRanking {
    pub entries: Vec<(usize, f64)>,
    pub n_max: usize,
    pub decay: f64,
}

impl SelectionRanking {
    pub fn indices(&self) -> Vec<usize> {
        self.entries.iter().map(|&(i, _)| i).collect()
    }

    /// TSV `rank<TAB>sentence_index<TAB>score`, ranks from 1.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (r, (i, score)) in self.entries.iter().enumerate() {
            writeln!(s, "{}\t{}\t{:?}", r + 1, i, score).unwrap();
        }
        s
    }

    pub fn from_tsv(text: &str, origin: &Path, n_max: usize, decay: f64) -> Result<Self> {
        let mut entries = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let bad = |msg: &str| Error::Format { path: origin.to_path_buf(), line: line_no + 1, msg: msg.to_string() };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(bad("expected rank, sentence index and score"));
            }
            let rank: usize = cols[0].parse().map_err(|_| bad("bad rank"))?;
            if rank != line_no + 1 {
                return Err(bad("ranks must be consecutive from 1"));
            }
            let idx = cols[1].parse().map_err(|_| bad("bad sentence index"))?;
            let score = cols[2].parse().map_err(|_| bad("bad score"))?;
            entries.push((idx, score));
        }
        Ok(SelectionRanking { entries, n_max, decay })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Key(f64);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Resumable greedy selector backed by a lazily rescored max-heap.
///
/// Weights only decrease, so a stored score is an upper bound of the
/// current one. A popped entry whose score is stale is rescored and pushed
/// back; a fresh one is the exact greedy choice.
#[derive(Clone, Debug)]
pub struct Selector {
    table: FeatureTable,
    decay: f64,
    grams: Vec<Vec<String>>,
    lengths: Vec<usize>,
    heap: BinaryHeap<(Key, Reverse<usize>)>,
    ranking: SelectionRanking,
}

impl Selector {
    pub fn new<S: AsRef<str>>(corpus: &[S], table: FeatureTable, decay: f64) -> Result<Self> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::Config(format!("decay {decay} outside (0, 1)")));
        }
        let n_max = table.n_max;
        let grams: Vec<Vec<String>> = corpus.iter().map(|s| sentence_ngrams(s.as_ref(), n_max)).collect();
        let lengths: Vec<usize> = corpus.iter().map(|s| s.as_ref().split_whitespace().count()).collect();
        let heap = grams
            .iter()
            .zip(&lengths)
            .enumerate()
            .map(|(i, (g, &l))| (Key(score_grams(g, l, &table)), Reverse(i)))
            .collect();
        Ok(Selector { table, decay, grams, lengths, heap, ranking: SelectionRanking { entries: Vec::new(), n_max, decay } })
    }

    pub fn ranking(&self) -> &SelectionRanking {
        &self.ranking
    }

    pub fn table(&self) -> &FeatureTable {
        &self.table
    }

    pub fn remaining(&self) -> usize {
        self.grams.len() - self.ranking.entries.len()
    }

    fn pick(&mut self) -> Option<(usize, f64)> {
        while let Some((Key(stored), Reverse(i))) = self.heap.pop() {
            let fresh = score_grams(&self.grams[i], self.lengths[i], &self.table);
            if fresh == stored {
                for g in &self.grams[i] {
                    self.table.decay(g, self.decay);
                }
                return Some((i, fresh));
            }
            self.heap.push((Key(fresh), Reverse(i)));
        }
        None
    }

    /// The next `k` sentences of the greedy order.
    pub fn next_slice(&mut self, k: usize) -> Result<Vec<(usize, f64)>> {
        if k > self.remaining() {
            return Err(Error::Input(format!("asked for {k} more sentences but only {} remain", self.remaining())));
        }
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            let picked = self.pick().expect("remaining count checked");
            out.push(picked);
        }
        self.ranking.entries.extend_from_slice(&out);
        Ok(out)
    }
}

/// The `n` nearest sentences of `corpus` to the table's domain.
pub fn select<S: AsRef<str>>(corpus: &[S], table: FeatureTable, n: usize, decay: f64) -> Result<Selector> {
    if n == 0 || n > corpus.len() {
        return Err(Error::Input(format!("selection size {n} must be in 1..={}", corpus.len())));
    }
    let mut sel = Selector::new(corpus, table, decay)?;
    sel.next_slice(n)?;
    Ok(sel)
}

/// `⌈count / denominator⌉`, the size of a fractional selection.
pub fn fraction(count: usize, denominator: usize) -> usize {
    count.div_ceil(denominator)
}
