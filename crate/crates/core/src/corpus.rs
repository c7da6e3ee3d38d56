//! One-sentence-per-line UTF-8 corpora.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentencePair {
    pub source: String,
    pub target: String,
}

/// Read a corpus file. Rejects a byte-order mark and invalid UTF-8 (with line number).
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_lines(&bytes, path)
}

pub fn parse_lines(bytes: &[u8], path: &Path) -> Result<Vec<String>> {
    let fmt_err = |line: usize, msg: &str| Error::Format { path: path.to_path_buf(), line, msg: msg.to_string() };
    if bytes.starts_with(&[0xEF, 0xBB, 0xBF]) {
        return Err(fmt_err(1, "byte-order mark not allowed"));
    }
    if bytes.is_empty() {
        return Ok(Vec::new());
    }
    let body = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    body.split(|&b| b == b'\n')
        .enumerate()
        .map(|(i, raw)| {
            let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
            std::str::from_utf8(raw).map(str::to_string).map_err(|_| fmt_err(i + 1, "invalid UTF-8"))
        })
        .collect()
}

/// Write newline-terminated lines.
pub fn write_lines<S: AsRef<str>>(path: &Path, lines: &[S]) -> Result<()> {
    fs::write(path, join_lines(lines)).map_err(|e| Error::io(path, e))
}

pub fn join_lines<S: AsRef<str>>(lines: &[S]) -> String {
    let mut s = String::with_capacity(lines.iter().map(|l| l.as_ref().len() + 1).sum());
    for l in lines {
        s.push_str(l.as_ref());
        s.push('\n');
    }
    s
}

/// Line-aligned source/target pairs.
pub fn load_parallel(source: &Path, target: &Path) -> Result<Vec<SentencePair>> {
    let src = read_lines(source)?;
    let tgt = read_lines(target)?;
    if src.len() != tgt.len() {
        return Err(Error::Input(format!(
            "{} has {} lines but {} has {} lines",
            source.display(),
            src.len(),
            target.display(),
            tgt.len()
        )));
    }
    Ok(src.into_iter().zip(tgt).map(|(source, target)| SentencePair { source, target }).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CorpusStats {
    pub sentences: usize,
    pub tokens: usize,
    pub unique: usize,
}

impl CorpusStats {
    pub fn of<S: AsRef<str>>(lines: &[S]) -> Self {
        let mut seen = HashSet::new();
        let mut tokens = 0;
        for l in lines {
            for t in l.as_ref().split_whitespace() {
                tokens += 1;
                seen.insert(t.to_string());
            }
        }
        CorpusStats { sentences: lines.len(), tokens, unique: seen.len() }
    }
}

/// `sentences  tokens (unique)`
impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{} ({})", self.sentences, self.tokens, self.unique)
    }
}

/// Dataset summary table, one row per named corpus side.
pub fn stats_table(rows: &[(&str, CorpusStats)]) -> String {
    let mut s = String::from("data\tsentences\ttokens (unique)\n");
    for (name, st) in rows {
        s.push_str(&format!("{name}\t{st}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, bytes).unwrap();
        p
    }

    #[test]
    fn three_line_files_give_three_pairs() {
        let d = tempfile::tempdir().unwrap();
        let s = write(d.path(), "s", b"a\nb\nc\n");
        let t = write(d.path(), "t", b"x\ny\nz\n");
        let pairs = load_parallel(&s, &t).unwrap();
        assert_eq!(pairs.len(), 3);
        assert_eq!(pairs[1], SentencePair { source: "b".into(), target: "y".into() });
    }

    #[test]
    fn count_mismatch_names_both_counts() {
        let d = tempfile::tempdir().unwrap();
        let s = write(d.path(), "s", b"a\nb\nc\n");
        let t = write(d.path(), "t", b"w\nx\ny\nz\n");
        let msg = load_parallel(&s, &t).unwrap_err().to_string();
        assert!(msg.contains('3') && msg.contains('4'), "{msg}");
    }

    #[test]
    fn invalid_utf8_reports_line() {
        let d = tempfile::tempdir().unwrap();
        let s = write(d.path(), "s", b"ok\nfine\nbad \xff\n");
        match read_lines(&s).unwrap_err() {
            Error::Format { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn bom_rejected() {
        assert!(parse_lines(b"\xEF\xBB\xBFa\n", Path::new("x")).is_err());
    }

    #[test]
    fn missing_file_names_path() {
        let msg = read_lines(Path::new("/no/such/corpus.txt")).unwrap_err().to_string();
        assert!(msg.contains("/no/such/corpus.txt"));
    }

    #[test]
    fn round_trip_and_stats() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("c");
        let lines = vec!["a b a".to_string(), String::new(), "c".to_string()];
        write_lines(&p, &lines).unwrap();
        assert_eq!(read_lines(&p).unwrap(), lines);
        let st = CorpusStats::of(&lines);
        assert_eq!(st, CorpusStats { sentences: 3, tokens: 4, unique: 3 });
        assert_eq!(st.to_string(), "3\t4 (3)");
    }
}
