//! Token/id mapping with reserved specials.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

pub const SPECIALS: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::Input(format!("duplicate vocabulary token {t:?}")));
            }
        }
        for (i, s) in SPECIALS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(Error::Input(format!("vocabulary id {i} must be {s}")));
            }
        }
        Ok(Vocabulary { tokens, ids })
    }

    /// Frequency-ranked vocabulary (ties lexicographic) truncated to `max_size` entries including specials.
    pub fn build<S: AsRef<str>>(corpus: &[S], max_size: usize) -> Result<Self> {
        if max_size < SPECIALS.len() + 1 {
            return Err(Error::Config(format!("vocabulary max size {max_size} is below 5")));
        }
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for line in corpus {
            for t in line.as_ref().split_whitespace() {
                if !SPECIALS.contains(&t) {
                    *counts.entry(t).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_size - SPECIALS.len());
        let tokens = SPECIALS.iter().map(|s| s.to_string()).chain(ranked.into_iter().map(|(t, _)| t.to_string())).collect();
        Vocabulary::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, sentence: &str) -> Vec<usize> {
        sentence.split_whitespace().map(|t| self.id(t)).collect()
    }

    /// Ids back to text, stopping at EOS and skipping PAD/BOS.
    pub fn decode(&self, ids: &[usize]) -> String {
        let mut out: Vec<&str> = Vec::with_capacity(ids.len());
        for &i in ids {
            match i {
                EOS => break,
                PAD | BOS => continue,
                _ => out.push(self.token(i).unwrap_or(SPECIALS[UNK])),
            }
        }
        out.join(" ")
    }

    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocabulary::from_tokens(text.lines().map(str::to_string).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_then_frequency() {
        let v = Vocabulary::build(&["a a b"], 10).unwrap();
        assert_eq!(v.tokens(), &["<pad>", "<s>", "</s>", "<unk>", "a", "b"]);
    }

    #[test]
    fn ties_are_lexicographic() {
        let v = Vocabulary::build(&["z y x y z x"], 10).unwrap();
        assert_eq!(&v.tokens()[4..], &["x", "y", "z"]);
    }

    #[test]
    fn truncates_to_max_size() {
        let v = Vocabulary::build(&["a a a b b c"], 6).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("c"), UNK);
    }

    #[test]
    fn too_small_max_size() {
        assert!(matches!(Vocabulary::build(&["a"], 4), Err(Error::Config(_))));
    }

    #[test]
    fn encode_decode_inverse() {
        let v = Vocabulary::build(&["the cat sat"], 20).unwrap();
        let ids = v.encode("sat the cat");
        assert_eq!(v.decode(&ids), "sat the cat");
        assert_eq!(v.encode("dog"), vec![UNK]);
    }

    #[test]
    fn file_round_trip() {
        let v = Vocabulary::build(&["b a c a"], 20).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        v.save(&p).unwrap();
        assert_eq!(Vocabulary::load(&p).unwrap(), v);
    }
}
