//! End-to-end experiments: baseline, self-training variants, iterative
//! self-training, run manifests and reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bpe::{debpe, learn_bpe, BpeApplier, MergeTable};
use crate::corpus::{self, CorpusStats};
use crate::error::{Error, Result};
use crate::eval::corpus_bleu;
use crate::fda::{FeatureTable, Selector, DEFAULT_DECAY, DEFAULT_N_MAX};
use crate::nmt::{
    average_checkpoints, pretrain_finetune, train, Checkpoint, DecodeMode, EncodedPair, ModelConfig, Seq2Seq,
    TrainConfig, TrainLog,
};
use crate::optim::AdamConfig;
use crate::qe::{save_scores, score_all, select_best, ModelConfidence};
use crate::seed;
use crate::vocab::Vocabulary;

const TRANSLATE_BATCH: usize = 64;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Experiment settings, read from a `key=value` file.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub src: PathBuf,
    pub tgt: PathBuf,
    pub mono: PathBuf,
    pub dev_src: PathBuf,
    pub dev_tgt: PathBuf,
    pub test_src: PathBuf,
    pub test_tgt: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub bpe_merges: usize,
    pub vocab_size: usize,
    pub n_max: usize,
    pub decay: f64,
    /// Selection size; `None` uses every monolingual sentence.
    pub n: Option<usize>,
    /// QE keep size; `None` keeps every translation.
    pub m: Option<usize>,
    /// Cumulative `(n_k, m_k)` per iteration.
    pub schedule: Vec<(usize, usize)>,
    /// Vocabulary sizes are filled in from the data.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub average: usize,
    pub beam: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            src: PathBuf::new(),
            tgt: PathBuf::new(),
            mono: PathBuf::new(),
            dev_src: PathBuf::new(),
            dev_tgt: PathBuf::new(),
            test_src: PathBuf::new(),
            test_tgt: PathBuf::new(),
            out: PathBuf::from("out"),
            seed: 1,
            bpe_merges: 10_000,
            vocab_size: 50_000,
            n_max: DEFAULT_N_MAX,
            decay: DEFAULT_DECAY,
            n: None,
            m: None,
            schedule: Vec::new(),
            model: ModelConfig::new(1, 1),
            train: TrainConfig::default(),
            pretrain: TrainConfig::default(),
            finetune: TrainConfig::default(),
            average: 8,
            beam: 5,
        }
    }
}

fn parse_opt(raw: &str) -> Option<&str> {
    if raw == "all" || raw == "none" {
        None
    } else {
        Some(raw)
    }
}

fn fmt_opt(v: Option<usize>) -> String {
    v.map_or_else(|| "all".to_string(), |x| x.to_string())
}

pub fn parse_schedule(raw: &str) -> Result<Vec<(usize, usize)>> {
    if raw.trim().is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',')
        .map(|item| {
            let (n, m) = item
                .trim()
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("schedule entry {item:?} is not n:m")))?;
            let p = |s: &str| s.trim().parse::<usize>().map_err(|_| Error::Config(format!("bad schedule size {s:?}")));
            Ok((p(n)?, p(m)?))
        })
        .collect()
}

fn train_keys(prefix: &str, t: &TrainConfig, out: &mut BTreeMap<String, String>) {
    out.insert(format!("{prefix}.batch_size"), t.batch_size.to_string());
    out.insert(format!("{prefix}.lr"), format!("{:?}", t.adam.learning_rate));
    out.insert(format!("{prefix}.eval_interval"), t.eval_interval.to_string());
    out.insert(format!("{prefix}.max_steps"), t.max_steps.to_string());
    out.insert(format!("{prefix}.stop_threshold"), format!("{:?}", t.stop_threshold));
    out.insert(format!("{prefix}.stop_window"), t.stop_window.to_string());
}

fn set_train_key(t: &mut TrainConfig, field: &str, raw: &str) -> std::result::Result<bool, ()> {
    match field {
        "batch_size" => t.batch_size = raw.parse().map_err(|_| ())?,
        "lr" => t.adam = AdamConfig { learning_rate: raw.parse().map_err(|_| ())?, ..t.adam },
        "eval_interval" => t.eval_interval = raw.parse().map_err(|_| ())?,
        "max_steps" => t.max_steps = raw.parse().map_err(|_| ())?,
        "stop_threshold" => t.stop_threshold = raw.parse().map_err(|_| ())?,
        "stop_window" => t.stop_window = raw.parse().map_err(|_| ())?,
        _ => return Ok(false),
    }
    Ok(true)
}

impl ExperimentConfig {
    /// Parse `key=value` lines; `#` starts a comment. Relative paths resolve against `base`.
    pub fn parse(text: &str, origin: &Path, base: &Path) -> Result<Self> {
        let mut entries: Vec<(usize, String, String)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Format {
                path: origin.to_path_buf(),
                line: i + 1,
                msg: "expected key=value".into(),
            })?;
            entries.push((i + 1, k.trim().to_string(), v.trim().to_string()));
        }
        // train.* first so pretrain.* / finetune.* can override it
        entries.sort_by_key(|(_, k, _)| !k.starts_with("train."));
        let mut c = ExperimentConfig::default();
        let mut pre: Vec<(String, String)> = Vec::new();
        let mut fine: Vec<(String, String)> = Vec::new();
        for (line, k, v) in entries {
            let bad = || Error::Format { path: origin.to_path_buf(), line, msg: format!("bad value for {k}: {v}") };
            let path = || base.join(&v);
            match k.as_str() {
                "src" => c.src = path(),
                "tgt" => c.tgt = path(),
                "mono" => c.mono = path(),
                "dev.src" => c.dev_src = path(),
                "dev.tgt" => c.dev_tgt = path(),
                "test.src" => c.test_src = path(),
                "test.tgt" => c.test_tgt = path(),
                "out" => c.out = path(),
                "seed" => c.seed = v.parse().map_err(|_| bad())?,
                "bpe.merges" => c.bpe_merges = v.parse().map_err(|_| bad())?,
                "vocab.size" => c.vocab_size = v.parse().map_err(|_| bad())?,
                "fda.nmax" => c.n_max = v.parse().map_err(|_| bad())?,
                "fda.decay" => c.decay = v.parse().map_err(|_| bad())?,
                "select.n" => c.n = parse_opt(&v).map(str::parse).transpose().map_err(|_| bad())?,
                "qe.m" => c.m = parse_opt(&v).map(str::parse).transpose().map_err(|_| bad())?,
                "schedule" => c.schedule = parse_schedule(&v)?,
                "average" => c.average = v.parse().map_err(|_| bad())?,
                "eval.beam" => c.beam = v.parse().map_err(|_| bad())?,
                "model.embedding" => c.model.embedding = v.parse().map_err(|_| bad())?,
                "model.hidden" => c.model.hidden = v.parse().map_err(|_| bad())?,
                "model.attention" => c.model.attention = v.parse().map_err(|_| bad())?,
                "model.encoder_layers" => c.model.encoder_layers = v.parse().map_err(|_| bad())?,
                "model.decoder_layers" => c.model.decoder_layers = v.parse().map_err(|_| bad())?,
                "model.bidirectional" => c.model.bidirectional = v.parse().map_err(|_| bad())?,
                "model.dropout" => c.model.dropout = v.parse().map_err(|_| bad())?,
                "model.max_decode_len" => c.model.max_decode_len = v.parse().map_err(|_| bad())?,
                other => {
                    let (scope, field) = other.split_once('.').unwrap_or((other, ""));
                    let known = match scope {
                        "train" => {
                            let ok = set_train_key(&mut c.train, field, &v).map_err(|_| bad())?;
                            c.pretrain = c.train.clone();
                            c.finetune = c.train.clone();
                            ok
                        }
                        "pretrain" => {
                            pre.push((field.to_string(), v.clone()));
                            set_train_key(&mut c.pretrain.clone(), field, &v).map_err(|_| bad())?
                        }
                        "finetune" => {
                            fine.push((field.to_string(), v.clone()));
                            set_train_key(&mut c.finetune.clone(), field, &v).map_err(|_| bad())?
                        }
                        _ => false,
                    };
                    if !known {
                        return Err(Error::Format { path: origin.to_path_buf(), line, msg: format!("unknown key {k}") });
                    }
                }
            }
        }
        for (f, v) in pre {
            let _ = set_train_key(&mut c.pretrain, &f, &v);
        }
        for (f, v) in fine {
            let _ = set_train_key(&mut c.finetune, &f, &v);
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, path, base)
    }

    pub fn validate(&self) -> Result<()> {
        if let (Some(n), Some(m)) = (self.n, self.m) {
            if n <= m {
                return Err(Error::Config(format!("selection size n={n} must exceed keep size m={m}")));
            }
        }
        check_schedule(&self.schedule)?;
        if self.average == 0 || self.beam == 0 {
            return Err(Error::Config("average and eval.beam must be positive".into()));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::Config(format!("fda.decay {} outside (0, 1)", self.decay)));
        }
        let mut m = self.model.clone();
        m.src_vocab = 1;
        m.tgt_vocab = 1;
        m.validate()
    }

    /// Canonical snapshot, stable key order.
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let p = |x: &PathBuf| x.display().to_string();
        for (k, v) in [
            ("src", &self.src),
            ("tgt", &self.tgt),
            ("mono", &self.mono),
            ("dev.src", &self.dev_src),
            ("dev.tgt", &self.dev_tgt),
            ("test.src", &self.test_src),
            ("test.tgt", &self.test_tgt),
            ("out", &self.out),
        ] {
            m.insert(k.to_string(), p(v));
        }
        m.insert("seed".into(), self.seed.to_string());
        m.insert("bpe.merges".into(), self.bpe_merges.to_string());
        m.insert("vocab.size".into(), self.vocab_size.to_string());
        m.insert("fda.nmax".into(), self.n_max.to_string());
        m.insert("fda.decay".into(), format!("{:?}", self.decay));
        m.insert("select.n".into(), fmt_opt(self.n));
        m.insert("qe.m".into(), fmt_opt(self.m));
        m.insert(
            "schedule".into(),
            self.schedule.iter().map(|(n, k)| format!("{n}:{k}")).collect::<Vec<_>>().join(","),
        );
        m.insert("average".into(), self.average.to_string());
        m.insert("eval.beam".into(), self.beam.to_string());
        for (k, v) in self.model.to_pairs() {
            if k != "model.src_vocab" && k != "model.tgt_vocab" {
                m.insert(k, v);
            }
        }
        train_keys("train", &self.train, &mut m);
        train_keys("pretrain", &self.pretrain, &mut m);
        train_keys("finetune", &self.finetune, &mut m);
        m
    }

    pub fn to_text(&self) -> String {
        self.to_pairs().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

/// Cumulative sizes must grow, and each iteration must select more than it keeps.
pub fn check_schedule(schedule: &[(usize, usize)]) -> Result<()> {
    let (mut pn, mut pm) = (0, 0);
    for (k, &(n, m)) in schedule.iter().enumerate() {
        if n < pn || m <= pm || n - pn <= m - pm {
            return Err(Error::Config(format!(
                "schedule entry {} ({n}:{m}) must add more selected than kept sentences and keep at least one",
                k + 1
            )));
        }
        (pn, pm) = (n, m);
    }
    Ok(())
}

/// Raw corpora of one experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct Datasets {
    pub train_src: Vec<String>,
    pub train_tgt: Vec<String>,
    pub mono: Vec<String>,
    pub dev_src: Vec<String>,
    pub dev_tgt: Vec<String>,
    pub test_src: Vec<String>,
    pub test_tgt: Vec<String>,
}

impl Datasets {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let train = corpus::load_parallel(&cfg.src, &cfg.tgt)?;
        let dev = corpus::load_parallel(&cfg.dev_src, &cfg.dev_tgt)?;
        let test = corpus::load_parallel(&cfg.test_src, &cfg.test_tgt)?;
        let unzip = |p: Vec<corpus::SentencePair>| -> (Vec<String>, Vec<String>) {
            p.into_iter().map(|s| (s.source, s.target)).unzip()
        };
        let (train_src, train_tgt) = unzip(train);
        let (dev_src, dev_tgt) = unzip(dev);
        let (test_src, test_tgt) = unzip(test);
        let mono = corpus::read_lines(&cfg.mono)?;
        Ok(Datasets { train_src, train_tgt, mono, dev_src, dev_tgt, test_src, test_tgt })
    }

    fn sides(&self) -> [(&'static str, &Vec<String>); 7] {
        [
            ("train.src", &self.train_src),
            ("train.tgt", &self.train_tgt),
            ("mono", &self.mono),
            ("dev.src", &self.dev_src),
            ("dev.tgt", &self.dev_tgt),
            ("test.src", &self.test_src),
            ("test.tgt", &self.test_tgt),
        ]
    }

    /// SHA-256 of each side as newline-terminated text.
    pub fn hashes(&self) -> BTreeMap<String, String> {
        self.sides().iter().map(|(k, v)| (k.to_string(), sha256_hex(corpus::join_lines(v).as_bytes()))).collect()
    }

    pub fn stats(&self) -> String {
        let rows: Vec<(&str, CorpusStats)> = self.sides().iter().map(|(k, v)| (*k, CorpusStats::of(v))).collect();
        corpus::stats_table(&rows)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (k, v) in self.sides() {
            corpus::write_lines(&dir.join(k), v)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRef {
    pub step: u64,
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub dev_bleu: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub phase: String,
    pub first_step: u64,
    pub last_step: u64,
    pub checkpoints: Vec<CheckpointRef>,
    pub average: CheckpointRef,
    /// Test BLEU of the averaged last checkpoints.
    pub average_bleu: f64,
    pub best_step: u64,
    /// Test BLEU of the checkpoint with the best dev score.
    pub best_bleu: f64,
    pub dev_history: Vec<(u64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub method: String,
    /// Authentic training pairs.
    pub authentic: usize,
    /// Monolingual sentences available.
    pub monolingual: usize,
    /// Sentences selected for translation (cumulative for iterations).
    pub selected: usize,
    /// Synthetic pairs used for pre-training (cumulative for iterations).
    pub kept: usize,
    pub artifacts: BTreeMap<String, String>,
    pub phases: Vec<PhaseRecord>,
}

impl StageRecord {
    pub fn phase(&self, name: &str) -> Option<&PhaseRecord> {
        self.phases.iter().find(|p| p.phase == name)
    }

    pub fn pretrain_bleu(&self) -> Option<f64> {
        self.phase("pretrain").map(|p| p.average_bleu)
    }

    /// Fine-tune score, or the plain training score of a baseline.
    pub fn final_bleu(&self) -> f64 {
        self.phases.last().map_or(f64::NAN, |p| p.average_bleu)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
    /// Seconds per stage.
    pub wall_clock: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format {
            path: origin.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// The manifest without timings and output location, for run-to-run comparison.
    pub fn reproducible(&self) -> RunManifest {
        let mut m = self.clone();
        m.wall_clock.clear();
        m.config.remove("out");
        m
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == name)
    }
}

/// Tokenized data and vocabularies shared by all stages.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub data: Datasets,
    pub merges: MergeTable,
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
    pub authentic: Vec<EncodedPair>,
    pub mono_ids: Vec<Vec<usize>>,
    pub dev_ids: Vec<Vec<usize>>,
    pub test_ids: Vec<Vec<usize>>,
    pub model: ModelConfig,
}

impl Prepared {
    pub fn new(cfg: &ExperimentConfig, data: Datasets) -> Result<Self> {
        if data.train_src.is_empty() || data.dev_src.is_empty() || data.test_src.is_empty() {
            return Err(Error::Input("training, dev and test corpora must be non-empty".into()));
        }
        let joint: Vec<&String> = data.train_src.iter().chain(&data.train_tgt).collect();
        let merges = learn_bpe(&joint, cfg.bpe_merges)?;
        let mut ap = BpeApplier::new(&merges);
        let mut seg = |lines: &[String]| -> Vec<String> { lines.iter().map(|l| ap.apply(l)).collect() };
        let src = seg(&data.train_src);
        let tgt = seg(&data.train_tgt);
        let mono = seg(&data.mono);
        let dev = seg(&data.dev_src);
        let test = seg(&data.test_src);
        let src_vocab = Vocabulary::build(&src, cfg.vocab_size)?;
        let tgt_vocab = Vocabulary::build(&tgt, cfg.vocab_size)?;
        let authentic = src
            .iter()
            .zip(&tgt)
            .map(|(s, t)| EncodedPair { src: src_vocab.encode(s), tgt: tgt_vocab.encode(t) })
            .filter(|p| !p.src.is_empty() && !p.tgt.is_empty())
            .collect();
        let enc = |v: &Vocabulary, lines: &[String]| lines.iter().map(|l| v.encode(l)).collect::<Vec<_>>();
        let mono_ids = enc(&src_vocab, &mono);
        let dev_ids = enc(&src_vocab, &dev);
        let test_ids = enc(&src_vocab, &test);
        let mut model = cfg.model.clone();
        model.src_vocab = src_vocab.len();
        model.tgt_vocab = tgt_vocab.len();
        model.validate()?;
        Ok(Prepared { data, merges, src_vocab, tgt_vocab, authentic, mono_ids, dev_ids, test_ids, model })
    }

    fn detok(&self, ids: &[usize]) -> String {
        debpe(&self.tgt_vocab.decode(ids))
    }

    /// Corpus BLEU of `model` on a source/reference set.
    pub fn bleu(&self, model: &Seq2Seq<f64>, sources: &[Vec<usize>], refs: &[String], mode: DecodeMode) -> Result<f64> {
        let hyps = translate_nonempty(model, sources, mode)?;
        let text: Vec<String> = hyps.iter().map(|h| self.detok(h)).collect();
        Ok(corpus_bleu(&text, refs)?.score)
    }

    pub fn dev_bleu(&self, model: &Seq2Seq<f64>) -> Result<f64> {
        self.bleu(model, &self.dev_ids, &self.data.dev_tgt, DecodeMode::Greedy)
    }

    pub fn test_bleu(&self, model: &Seq2Seq<f64>, beam: usize) -> Result<f64> {
        self.bleu(model, &self.test_ids, &self.data.test_tgt, DecodeMode::Beam(beam))
    }
}

/// Translations of each source; empty sources translate to nothing.
fn translate_nonempty(model: &Seq2Seq<f64>, sources: &[Vec<usize>], mode: DecodeMode) -> Result<Vec<Vec<usize>>> {
    let idx: Vec<usize> = (0..sources.len()).filter(|&i| !sources[i].is_empty()).collect();
    let batch: Vec<Vec<usize>> = idx.iter().map(|&i| sources[i].clone()).collect();
    let hyps = model.translate_all(&batch, mode, TRANSLATE_BATCH)?;
    let mut out = vec![Vec::new(); sources.len()];
    for (i, h) in idx.into_iter().zip(hyps) {
        out[i] = h.content().to_vec();
    }
    Ok(out)
}

/// Method label used in reports.
pub fn method_label(n: Option<usize>, m: Option<usize>) -> String {
    match (n, m) {
        (None, None) => "SL".into(),
        (Some(_), None) => "SL+DS".into(),
        (None, Some(_)) => "SL+QE".into(),
        (Some(_), Some(_)) => "SL+DS+QE".into(),
    }
}

/// A configured experiment with its accumulated manifest.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub prepared: Prepared,
    pub manifest: RunManifest,
    baseline: Option<Seq2Seq<f64>>,
    /// Called with progress lines.
    pub log: Box<dyn FnMut(&str) + Send>,
}

struct Candidates {
    indices: Vec<usize>,
    ranking: Option<String>,
}

impl Experiment {
    /// Load corpora from the configured paths.
    pub fn prepare(config: ExperimentConfig) -> Result<Self> {
        let data = Datasets::load(&config).map_err(|e| e.in_stage("load"))?;
        Self::with_data(config, data)
    }

    pub fn with_data(config: ExperimentConfig, data: Datasets) -> Result<Self> {
        config.validate()?;
        let prepared = Prepared::new(&config, data).map_err(|e| e.in_stage("prepare"))?;
        fs::create_dir_all(&config.out).map_err(|e| Error::io(&config.out, e))?;
        prepared.merges.save(&config.out.join("merges.txt"))?;
        prepared.src_vocab.save(&config.out.join("vocab.src"))?;
        prepared.tgt_vocab.save(&config.out.join("vocab.tgt"))?;
        let manifest = RunManifest {
            config: config.to_pairs(),
            inputs: prepared.data.hashes(),
            stages: Vec::new(),
            wall_clock: BTreeMap::new(),
        };
        Ok(Experiment { config, prepared, manifest, baseline: None, log: Box::new(|_| {}) })
    }

    fn say(&mut self, msg: &str) {
        (self.log)(msg);
    }

    fn save_manifest(&self) -> Result<()> {
        self.manifest.save(&self.config.out.join("manifest.json"))
    }

    fn push_stage(&mut self, record: StageRecord, secs: f64) -> Result<StageRecord> {
        self.manifest.wall_clock.insert(record.stage.clone(), secs);
        self.manifest.stages.retain(|s| s.stage != record.stage);
        self.manifest.stages.push(record.clone());
        self.save_manifest()?;
        Ok(record)
    }

    fn fresh_model(&self, stream: &str) -> Result<Seq2Seq<f64>> {
        Seq2Seq::init(self.prepared.model.clone(), &mut seed::stream(self.config.seed, stream))
    }

    /// Average the last checkpoints of a phase, score it and store its artifacts.
    fn summarize(&self, stage_dir: &str, phase: &str, log: &TrainLog<f64>) -> Result<(PhaseRecord, Seq2Seq<f64>)> {
        let dir = self.config.out.join(stage_dir);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let store = |ck: &Checkpoint<f64>, name: &str| -> Result<CheckpointRef> {
            let rel = format!("{stage_dir}/{name}");
            let bytes = ck.to_bytes();
            let path = self.config.out.join(&rel);
            fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
            let dev_bleu = log.evals.iter().find(|e| e.step == ck.step).map(|e| e.bleu);
            Ok(CheckpointRef { step: ck.step, path: rel, sha256: sha256_hex(&bytes), dev_bleu })
        };
        let last = log.last_checkpoints(self.config.average);
        if last.is_empty() {
            return Err(Error::Contract(format!("{phase} produced no checkpoints")));
        }
        let mut refs = Vec::new();
        for ck in &last {
            refs.push(store(ck, &format!("{phase}-{}.ckpt", ck.step))?);
        }
        let mut avg_ck = Checkpoint::new(self.prepared.model.clone(), average_checkpoints(&last)?, last.last().unwrap().step);
        avg_ck.meta = last.last().unwrap().meta.clone();
        avg_ck.meta.insert("averaged".into(), last.len().to_string());
        let average = store(&avg_ck, &format!("{phase}-average.ckpt"))?;
        let avg_model = Seq2Seq::new(avg_ck.config.clone(), avg_ck.params)?;
        let average_bleu = self.prepared.test_bleu(&avg_model, self.config.beam)?;

        let best = log
            .evals
            .iter()
            .fold(None::<&crate::nmt::EvalPoint>, |b, e| match b {
                Some(b) if b.bleu >= e.bleu => Some(b),
                _ => Some(e),
            })
            .map(|e| e.step)
            .unwrap_or(log.last_step);
        let best_ck = log.checkpoints.iter().find(|c| c.step == best).unwrap_or(last[last.len() - 1]);
        if !refs.iter().any(|r| r.step == best_ck.step) {
            refs.push(store(best_ck, &format!("{phase}-{}.ckpt", best_ck.step))?);
            refs.sort_by_key(|r| r.step);
        }
        let best_model = Seq2Seq::new(best_ck.config.clone(), best_ck.params.clone())?;
        let best_bleu = self.prepared.test_bleu(&best_model, self.config.beam)?;

        let evals: String = log
            .evals
            .iter()
            .map(|e| serde_json::json!({ "step": e.step, "bleu": e.bleu }).to_string() + "\n")
            .collect();
        let ev_path = dir.join(format!("{phase}-dev.jsonl"));
        fs::write(&ev_path, evals).map_err(|e| Error::io(&ev_path, e))?;

        let record = PhaseRecord {
            phase: phase.to_string(),
            first_step: log.first_step,
            last_step: log.last_step,
            checkpoints: refs,
            average,
            average_bleu,
            best_step: best_ck.step,
            best_bleu,
            dev_history: log.evals.iter().map(|e| (e.step, e.bleu)).collect(),
        };
        Ok((record, avg_model))
    }

    /// Train on the authentic data until the stop rule fires and average the last checkpoints.
    pub fn run_baseline(&mut self) -> Result<StageRecord> {
        let t0 = Instant::now();
        self.say("baseline: training");
        let model = self.fresh_model("init.baseline")?;
        let prep = &self.prepared;
        let mut ev = |m: &Seq2Seq<f64>| prep.dev_bleu(m);
        let log = train(model, &prep.authentic, &self.config.train, self.config.seed, 0, "train", Some(&mut ev))
            .map_err(|e| e.in_stage("baseline/train"))?;
        let (phase, avg) = self.summarize("baseline", "train", &log).map_err(|e| e.in_stage("baseline/evaluate"))?;
        self.say(&format!("baseline: average {:.2}, best {:.2} at step {}", phase.average_bleu, phase.best_bleu, phase.best_step));
        self.baseline = Some(avg);
        let record = StageRecord {
            stage: "baseline".into(),
            method: "baseline".into(),
            authentic: self.prepared.authentic.len(),
            monolingual: self.prepared.data.mono.len(),
            selected: 0,
            kept: 0,
            artifacts: BTreeMap::new(),
            phases: vec![phase],
        };
        self.push_stage(record, t0.elapsed().as_secs_f64())
    }

    /// The averaged baseline model, training it first if needed.
    pub fn baseline(&mut self) -> Result<Seq2Seq<f64>> {
        if self.baseline.is_none() {
            self.run_baseline()?;
        }
        Ok(self.baseline.clone().unwrap())
    }

    fn candidates(&self, n: Option<usize>, dir: &Path) -> Result<Candidates> {
        let Some(n) = n else {
            return Ok(Candidates { indices: (0..self.prepared.data.mono.len()).collect(), ranking: None });
        };
        let table = FeatureTable::extract(&self.prepared.data.test_src, self.config.n_max)?;
        let mut sel = Selector::new(&self.prepared.data.mono, table, self.config.decay)?;
        sel.next_slice(n)?;
        let path = dir.join("ranking.tsv");
        sel.ranking().save(&path)?;
        Ok(Candidates { indices: sel.ranking().indices(), ranking: Some(sha256_hex(sel.ranking().to_tsv().as_bytes())) })
    }

    /// Translate `indices` with `translator`, optionally keep the `keep` most confident.
    /// Returns the kept pairs in candidate order and writes audit files into `dir`.
    fn synthesize(
        &self,
        translator: &Seq2Seq<f64>,
        indices: &[usize],
        keep: Option<usize>,
        dir: &Path,
        artifacts: &mut BTreeMap<String, String>,
        stage: &str,
    ) -> Result<Vec<(usize, EncodedPair)>> {
        let prep = &self.prepared;
        let sources: Vec<Vec<usize>> = indices.iter().map(|&i| prep.mono_ids[i].clone()).collect();
        let hyps = translate_nonempty(translator, &sources, DecodeMode::Greedy).map_err(|e| e.in_stage(&format!("{stage}/translate")))?;
        let usable: Vec<usize> = (0..indices.len()).filter(|&k| !hyps[k].is_empty()).collect();
        let kept: Vec<usize> = match keep {
            None => usable,
            Some(m) => {
                let pairs: Vec<(Vec<usize>, Vec<usize>)> = usable.iter().map(|&k| (sources[k].clone(), hyps[k].clone())).collect();
                let qe = ModelConfidence { model: translator };
                let scored = score_all(&qe, &pairs, TRANSLATE_BATCH).map_err(|e| e.in_stage(&format!("{stage}/qe")))?;
                let targets: Vec<String> = usable.iter().map(|&k| prep.detok(&hyps[k])).collect();
                let mut audit = scored.clone();
                for (s, &k) in audit.iter_mut().zip(&usable) {
                    s.index = indices[k];
                }
                let path = dir.join("scores.tsv");
                save_scores(&path, &audit, &targets)?;
                artifacts.insert("scores.tsv".into(), sha256_hex(&fs::read(&path).map_err(|e| Error::io(&path, e))?));
                let best = select_best(&scored, m).map_err(|e| e.in_stage(&format!("{stage}/qe")))?;
                best.iter().map(|s| usable[s.index]).collect()
            }
        };
        let mut tsv = String::new();
        let mut out = Vec::with_capacity(kept.len());
        for k in kept {
            let i = indices[k];
            writeln!(tsv, "{i}\t{}\t{}", prep.data.mono[i], prep.detok(&hyps[k])).unwrap();
            out.push((i, EncodedPair { src: sources[k].clone(), tgt: hyps[k].clone() }));
        }
        let path = dir.join("synthetic.tsv");
        fs::write(&path, &tsv).map_err(|e| Error::io(&path, e))?;
        artifacts.insert("synthetic.tsv".into(), sha256_hex(tsv.as_bytes()));
        Ok(out)
    }

    fn retrain(&self, stage: &str, synthetic: &[EncodedPair]) -> Result<(Vec<PhaseRecord>, Seq2Seq<f64>)> {
        let model = self.fresh_model("init.selftrain")?;
        let prep = &self.prepared;
        let mut ev = |m: &Seq2Seq<f64>| prep.dev_bleu(m);
        let log = pretrain_finetune(
            model,
            synthetic,
            &prep.authentic,
            &self.config.pretrain,
            &self.config.finetune,
            self.config.seed,
            Some(&mut ev),
        )
        .map_err(|e| e.in_stage(&format!("{stage}/train")))?;
        let (pre, _) = self.summarize(stage, "pretrain", &log.pretrain).map_err(|e| e.in_stage(&format!("{stage}/evaluate")))?;
        let (fine, avg) = self.summarize(stage, "finetune", &log.finetune).map_err(|e| e.in_stage(&format!("{stage}/evaluate")))?;
        Ok((vec![pre, fine], avg))
    }

    /// Self-training: select `n` sentences (all when `None`), translate them
    /// with the baseline, keep the `m` most confident (all when `None`), then
    /// pre-train on the synthetic pairs and fine-tune on the authentic ones.
    pub fn run_selftrain(&mut self, n: Option<usize>, m: Option<usize>) -> Result<StageRecord> {
        let b = self.prepared.data.mono.len();
        if let Some(n) = n {
            if n == 0 || n > b {
                return Err(Error::Config(format!("selection size {n} must be in 1..={b}")));
            }
        }
        let pool = n.unwrap_or(b);
        if let Some(m) = m {
            if m == 0 || m >= pool {
                return Err(Error::Config(format!("keep size {m} must be in 1..{pool}")));
            }
        }
        let translator = self.baseline()?;
        let t0 = Instant::now();
        let method = method_label(n, m);
        let stage = match (n, m) {
            (None, None) => "sl".to_string(),
            (Some(n), None) => format!("sl-ds-{n}"),
            (None, Some(m)) => format!("sl-qe-{m}"),
            (Some(n), Some(m)) => format!("sl-ds-qe-{n}-{m}"),
        };
        self.say(&format!("{stage}: selecting and translating"));
        let dir = self.config.out.join(&stage);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let cand = self.candidates(n, &dir).map_err(|e| e.in_stage(&format!("{stage}/select")))?;
        let mut artifacts = BTreeMap::new();
        if let Some(h) = cand.ranking {
            artifacts.insert("ranking.tsv".into(), h);
        }
        let kept = self.synthesize(&translator, &cand.indices, m, &dir, &mut artifacts, &stage)?;
        let synthetic: Vec<EncodedPair> = kept.into_iter().map(|(_, p)| p).collect();
        self.say(&format!("{stage}: training on {} synthetic pairs", synthetic.len()));
        let (phases, _) = self.retrain(&stage, &synthetic)?;
        self.say(&format!(
            "{stage}: pre-train {:.2}, fine-tune {:.2}",
            phases[0].average_bleu, phases[1].average_bleu
        ));
        let record = StageRecord {
            stage,
            method,
            authentic: self.prepared.authentic.len(),
            monolingual: b,
            selected: cand.indices.len(),
            kept: synthetic.len(),
            artifacts,
            phases,
        };
        self.push_stage(record, t0.elapsed().as_secs_f64())
    }

    /// Iterative self-training over a cumulative `(n_k, m_k)` schedule.
    ///
    /// Each iteration extends the selection with the next `n_k - n_{k-1}`
    /// sentences, translates and scores only that slice with the latest
    /// model, keeps its best `m_k - m_{k-1}`, and retrains from scratch on
    /// everything kept so far.
    pub fn run_iterative(&mut self, schedule: &[(usize, usize)]) -> Result<Vec<StageRecord>> {
        check_schedule(schedule)?;
        if schedule.is_empty() {
            return Err(Error::Config("empty iteration schedule".into()));
        }
        let b = self.prepared.data.mono.len();
        if schedule.last().unwrap().0 > b {
            return Err(Error::Config(format!("schedule selects more than the {b} monolingual sentences")));
        }
        let mut translator = self.baseline()?;
        let table = FeatureTable::extract(&self.prepared.data.test_src, self.config.n_max)?;
        let mut selector = Selector::new(&self.prepared.data.mono, table, self.config.decay)?;
        let mut pool: Vec<EncodedPair> = Vec::new();
        let mut records = Vec::new();
        let (mut pn, mut pm) = (0, 0);
        for (k, &(n, m)) in schedule.iter().enumerate() {
            let t0 = Instant::now();
            let stage = format!("iteration-{}", k + 1);
            self.say(&format!("{stage}: selecting and translating"));
            let dir = self.config.out.join(&stage);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let slice: Vec<usize> = selector
                .next_slice(n - pn)
                .map_err(|e| e.in_stage(&format!("{stage}/select")))?
                .into_iter()
                .map(|(i, _)| i)
                .collect();
            selector.ranking().save(&dir.join("ranking.tsv"))?;
            let mut artifacts = BTreeMap::new();
            artifacts.insert("ranking.tsv".into(), sha256_hex(selector.ranking().to_tsv().as_bytes()));
            let kept = self.synthesize(&translator, &slice, Some(m - pm), &dir, &mut artifacts, &stage)?;
            pool.extend(kept.into_iter().map(|(_, p)| p));
            self.say(&format!("{stage}: training on {} synthetic pairs", pool.len()));
            let (phases, avg) = self.retrain(&stage, &pool)?;
            self.say(&format!(
                "{stage}: pre-train {:.2}, fine-tune {:.2}",
                phases[0].average_bleu, phases[1].average_bleu
            ));
            translator = avg;
            let record = StageRecord {
                stage,
                method: format!("SL+DS+QE iteration {}", k + 1),
                authentic: self.prepared.authentic.len(),
                monolingual: b,
                selected: n,
                kept: pool.len(),
                artifacts,
                phases,
            };
            records.push(self.push_stage(record, t0.elapsed().as_secs_f64())?);
            (pn, pm) = (n, m);
        }
        Ok(records)
    }
}

/// Test BLEU of a stored checkpoint, decoded with beam search.
pub fn evaluate_checkpoint(prepared: &Prepared, path: &Path, beam: usize) -> Result<f64> {
    let ck = Checkpoint::<f64>::load(path)?;
    let model = Seq2Seq::new(ck.config, ck.params)?;
    prepared.test_bleu(&model, beam)
}

fn method_rank(method: &str) -> usize {
    match method {
        "baseline" => 0,
        "SL" => 1,
        "SL+DS" => 2,
        "SL+QE" => 3,
        "SL+DS+QE" => 4,
        _ => 5,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub quantity: usize,
    pub pretrain: Option<f64>,
    pub finetune: f64,
}

/// Report rows ordered baseline, SL, SL+DS, SL+QE, SL+DS+QE (largest first), iterations.
pub fn report_rows(manifests: &[&RunManifest]) -> Vec<ReportRow> {
    let mut stages: Vec<&StageRecord> = manifests.iter().flat_map(|m| m.stages.iter()).collect();
    stages.sort_by_key(|s| {
        let rank = method_rank(&s.method);
        let q = match rank {
            4 => usize::MAX - s.kept,
            5 => s.kept,
            _ => 0,
        };
        (rank, q, s.stage.clone())
    });
    stages
        .into_iter()
        .map(|s| ReportRow {
            method: if s.method.starts_with("SL+DS+QE") && method_rank(&s.method) == 4 {
                format!("SL+DS+QE ({})", s.kept)
            } else {
                s.method.clone()
            },
            quantity: s.kept,
            pretrain: s.pretrain_bleu(),
            finetune: s.final_bleu(),
        })
        .collect()
}

/// TSV with columns method, monolingual quantity, pre-train BLEU, fine-tune BLEU.
pub fn report_tsv(rows: &[ReportRow]) -> String {
    let mut s = String::from("method\tquantity\tpretrain_bleu\tfinetune_bleu\n");
    for r in rows {
        let pre = r.pretrain.map_or_else(|| "-".to_string(), |v| v.to_string());
        writeln!(s, "{}\t{}\t{}\t{}", r.method, r.quantity, pre, r.finetune).unwrap();
    }
    s
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Quantity bars on the left axis, fine-tune and pre-train BLEU lines on the right axis.
pub fn report_svg(rows: &[ReportRow]) -> String {
    let (w, h) = (720.0f64, 420.0f64);
    let (left, right, top, bottom) = (70.0, 70.0, 40.0, 110.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let qmax = rows.iter().map(|r| r.quantity).max().unwrap_or(0).max(1) as f64;
    let bmax = rows
        .iter()
        .flat_map(|r| [Some(r.finetune), r.pretrain])
        .flatten()
        .filter(|v| v.is_finite())
        .fold(1.0f64, f64::max)
        * 1.1;
    let slot = pw / rows.len().max(1) as f64;
    let x = |i: usize| left + slot * (i as f64 + 0.5);
    let yq = |q: f64| top + ph - ph * q / qmax;
    let yb = |b: f64| top + ph - ph * b / bmax;
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#).unwrap();
    writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">Quantity vs quality</text>"#, w / 2.0).unwrap();
    for (i, r) in rows.iter().enumerate() {
        let bw = slot * 0.6;
        let y = yq(r.quantity as f64);
        writeln!(s, r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#b7c9e2"/>"##, x(i) - bw / 2.0, y, bw, top + ph - y).unwrap();
        writeln!(
            s,
            r#"<text transform="translate({:.1},{:.1}) rotate(35)" text-anchor="start">{}</text>"#,
            x(i) - 4.0,
            top + ph + 14.0,
            esc(&r.method)
        )
        .unwrap();
    }
    let line = |vals: Vec<(usize, f64)>, color: &str, out: &mut String| {
        let pts: Vec<String> = vals.iter().map(|&(i, v)| format!("{:.1},{:.1}", x(i), yb(v))).collect();
        if pts.len() > 1 {
            writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" ")).unwrap();
        }
        for &(i, v) in &vals {
            writeln!(out, r#"<circle cx="{:.1}" cy="{:.1}" r="3.5" fill="{color}"/>"#, x(i), yb(v)).unwrap();
        }
    };
    line(rows.iter().enumerate().map(|(i, r)| (i, r.finetune)).filter(|p| p.1.is_finite()).collect(), "#c0392b", &mut s);
    line(rows.iter().enumerate().filter_map(|(i, r)| r.pretrain.map(|p| (i, p))).collect(), "#7f8c8d", &mut s);
    writeln!(s, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#, top + ph).unwrap();
    writeln!(s, r#"<line x1="{}" y1="{top}" x2="{}" y2="{}" stroke="black"/>"#, left + pw, left + pw, top + ph).unwrap();
    writeln!(s, r#"<line x1="{left}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, top + ph, left + pw, top + ph).unwrap();
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let y = top + ph - ph * f;
        writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{:.0}</text>"#, left - 6.0, y + 4.0, qmax * f).unwrap();
        writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="start">{:.1}</text>"#, left + pw + 6.0, y + 4.0, bmax * f).unwrap();
    }
    writeln!(s, r#"<text transform="translate(16,{:.1}) rotate(-90)" text-anchor="middle">synthetic sentences</text>"#, top + ph / 2.0).unwrap();
    writeln!(s, r#"<text transform="translate({:.1},{:.1}) rotate(90)" text-anchor="middle">BLEU</text>"#, w - 14.0, top + ph / 2.0).unwrap();
    writeln!(s, r##"<text x="{left}" y="{}" fill="#c0392b">fine-tune</text><text x="{}" y="{}" fill="#7f8c8d">pre-train</text>"##, h - 8.0, left + 70.0, h - 8.0).unwrap();
    s.push_str("</svg>\n");
    s
}

/// Report table and figure for one or more manifests.
pub fn emit_report(manifests: &[&RunManifest]) -> (String, String) {
    let rows = report_rows(manifests);
    (report_tsv(&rows), report_svg(&rows))
}

pub fn write_report(dir: &Path, manifests: &[&RunManifest]) -> Result<()> {
    let (tsv, svg) = emit_report(manifests);
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let p = dir.join("report.tsv");
    fs::write(&p, tsv).map_err(|e| Error::io(&p, e))?;
    let p = dir.join("report.svg");
    fs::write(&p, svg).map_err(|e| Error::io(&p, e))
}
