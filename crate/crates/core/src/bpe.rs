//! Byte-pair-encoding subword segmentation.
//!
//! Words carry an end-of-word marker `</w>` on their final symbol while
//! merges are learned and applied. Emitted tokens use the `@@` suffix to
//! mark that the next token continues the same word.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const END_OF_WORD: &str = "</w>";
pub const CONTINUATION: &str = "@@";

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MergeTable {
    merges: Vec<(String, String)>,
}

impl MergeTable {
    pub fn new(merges: Vec<(String, String)>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for m in &merges {
            if !seen.insert(m.clone()) {
                return Err(Error::Input(format!("duplicate merge {} {}", m.0, m.1)));
            }
        }
        Ok(MergeTable { merges })
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn len(&self) -> usize {
        self.merges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (l, r) in &self.merges {
            s.push_str(l);
            s.push(' ');
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let mut merges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => merges.push((l.to_string(), r.to_string())),
                _ => {
                    return Err(Error::Format {
                        path: origin.to_path_buf(),
                        line: i + 1,
                        msg: "expected \"left right\"".into(),
                    })
                }
            }
        }
        MergeTable::new(merges)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        MergeTable::from_text(&text, path)
    }
}

fn split_word(word: &str) -> Vec<String> {
    let mut syms: Vec<String> = word.chars().map(String::from).collect();
    if let Some(last) = syms.last_mut() {
        last.push_str(END_OF_WORD);
    }
    syms
}

fn merge_in_place(syms: &mut Vec<String>, left: &str, right: &str) {
    let mut i = 0;
    while i + 1 < syms.len() {
        if syms[i] == left && syms[i + 1] == right {
            let r = syms.remove(i + 1);
            syms[i].push_str(&r);
        }
        i += 1;
    }
}

/// Greedy most-frequent-pair merge learning.
///
/// Ties are broken by the lexicographically smallest `(left, right)`.
/// Learning stops early once no pair occurs at least twice.
pub fn learn_bpe<S: AsRef<str>>(corpus: &[S], num_merges: usize) -> Result<MergeTable> {
    if corpus.is_empty() {
        return Err(Error::Input("cannot learn BPE from an empty corpus".into()));
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for line in corpus {
        for w in line.as_ref().split_whitespace() {
            *counts.entry(w).or_default() += 1;
        }
    }
    let mut words: Vec<(Vec<String>, u64)> = counts.into_iter().map(|(w, c)| (split_word(w), c)).collect();
    words.sort();

    let mut merges = Vec::with_capacity(num_merges);
    for _ in 0..num_merges {
        let mut pairs: HashMap<(&str, &str), u64> = HashMap::new();
        for (syms, c) in &words {
            for w in syms.windows(2) {
                *pairs.entry((w[0].as_str(), w[1].as_str())).or_default() += c;
            }
        }
        let best = pairs
            .into_iter()
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)));
        let Some(((l, r), c)) = best else { break };
        if c < 2 {
            break;
        }
        let (l, r) = (l.to_string(), r.to_string());
        for (syms, _) in &mut words {
            merge_in_place(syms, &l, &r);
        }
        merges.push((l, r));
    }
    Ok(MergeTable { merges })
}

/// Applies a merge table to whitespace-separated text.
///
/// Segmentations are cached per word.
#[derive(Clone, Debug)]
pub struct BpeApplier {
    ranks: HashMap<(String, String), usize>,
    cache: HashMap<String, Vec<String>>,
}

impl BpeApplier {
    pub fn new(table: &MergeTable) -> Self {
        let ranks = table.merges.iter().enumerate().map(|(i, p)| (p.clone(), i)).collect();
        BpeApplier { ranks, cache: HashMap::new() }
    }

    fn segment(&self, word: &str) -> Vec<String> {
        let mut syms = split_word(word);
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())).map(|&r| (r, w[0].clone(), w[1].clone())))
                .min();
            let Some((_, l, r)) = best else { break };
            merge_in_place(&mut syms, &l, &r);
        }
        let n = syms.len();
        for (i, s) in syms.iter_mut().enumerate() {
            if i + 1 == n {
                s.truncate(s.len() - END_OF_WORD.len());
            } else {
                s.push_str(CONTINUATION);
            }
        }
        syms
    }

    pub fn apply_tokens(&mut self, sentence: &str) -> Vec<String> {
        let mut out = Vec::new();
        for w in sentence.split_whitespace() {
            if !self.cache.contains_key(w) {
                let seg = self.segment(w);
                self.cache.insert(w.to_string(), seg);
            }
            out.extend(self.cache[w].iter().cloned());
        }
        out
    }

    pub fn apply(&mut self, sentence: &str) -> String {
        self.apply_tokens(sentence).join(" ")
    }
}

/// Segment one sentence; see [`BpeApplier`] for repeated use.
pub fn apply_bpe(sentence: &str, table: &MergeTable) -> String {
    BpeApplier::new(table).apply(sentence)
}

/// Undo subword segmentation.
pub fn debpe(tokens: &str) -> String {
    let joined = tokens.replace("@@ ", "");
    joined.strip_suffix(CONTINUATION).map(str::to_string).unwrap_or(joined)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_merges_is_empty() {
        assert!(learn_bpe(&["a b c"], 0).unwrap().is_empty());
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let empty: [&str; 0] = [];
        assert!(learn_bpe(&empty, 10).is_err());
    }

    #[test]
    fn low_lower_first_merge() {
        let t = learn_bpe(&["low low lower"], 1).unwrap();
        assert_eq!(t.merges()[0], ("l".to_string(), "o".to_string()));
    }

    #[test]
    fn ties_break_lexicographically() {
        // (a,b) and (c,d) both occur twice; (a,b) sorts first
        let t = learn_bpe(&["cd ab cd ab"], 1).unwrap();
        assert_eq!(t.merges()[0], ("a".to_string(), "b</w>".to_string()));
    }

    #[test]
    fn stops_when_no_pair_repeats() {
        let t = learn_bpe(&["abc"], 5).unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn fully_split_without_merges() {
        assert_eq!(apply_bpe("cat", &MergeTable::default()), "c@@ a@@ t");
    }

    #[test]
    fn training_word_becomes_single_token() {
        let corpus = ["lower lower lower newer newer"];
        let t = learn_bpe(&corpus, 20).unwrap();
        assert_eq!(apply_bpe("lower", &t), "lower");
        assert_eq!(apply_bpe("newer lower", &t), "newer lower");
    }

    #[test]
    fn debpe_examples() {
        assert_eq!(debpe("c@@ a@@ t"), "cat");
        assert_eq!(debpe("hello world"), "hello world");
        assert_eq!(debpe("a@@"), "a");
    }

    #[test]
    fn unknown_characters_pass_through() {
        let t = learn_bpe(&["aa aa aa"], 3).unwrap();
        assert_eq!(apply_bpe("zq", &t), "z@@ q");
    }

    #[test]
    fn application_is_idempotent_on_merged_output() {
        let t = learn_bpe(&["the cat sat on the mat the cat"], 30).unwrap();
        let once = apply_bpe("the cat sat", &t);
        let twice = apply_bpe(&debpe(&once), &t);
        assert_eq!(once, twice);
    }

    #[test]
    fn table_text_round_trip() {
        let t = learn_bpe(&["low low lower newest newest widest"], 8).unwrap();
        let back = MergeTable::from_text(&t.to_text(), Path::new("mem")).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn malformed_table_line_reports_line_number() {
        let err = MergeTable::from_text("a b\nabc\n", Path::new("m.txt")).unwrap_err();
        assert!(err.to_string().contains("m.txt:2"), "{err}");
    }
}
