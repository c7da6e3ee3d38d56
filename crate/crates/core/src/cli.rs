//! Command-line interface.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bpe::{debpe, learn_bpe, BpeApplier, MergeTable};
use crate::corpus::{self, CorpusStats};
use crate::error::{Error, Result};
use crate::eval::corpus_bleu;
use crate::fda::{FeatureTable, Selector, DEFAULT_DECAY, DEFAULT_N_MAX};
use crate::nmt::{Checkpoint, DecodeMode, Seq2Seq};
use crate::pipeline::{write_report, Experiment, ExperimentConfig, RunManifest};
use crate::qe::{score_all, scores_tsv, select_best, ModelConfidence};
use crate::vocab::Vocabulary;

#[derive(Debug, Parser)]
#[command(name = "slnmt", version, about = "Self-training toolkit for low-resource neural machine translation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn joint BPE merges from a parallel corpus
    LearnBpe {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        tgt: Option<PathBuf>,
        /// Number of merge operations
        #[arg(long, default_value_t = 10_000)]
        num_merges: usize,
        /// Merge table to write
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment a corpus with a merge table
    ApplyBpe {
        #[arg(long)]
        merges: PathBuf,
        #[arg(long)]
        src: PathBuf,
        /// Output file (standard output if omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a vocabulary from a segmented corpus
    BuildVocab {
        #[arg(long)]
        src: PathBuf,
        #[arg(long, default_value_t = 50_000)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a baseline model as described by a config file
    Train(RunArgs),
    /// Translate a corpus with a checkpoint
    Translate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        src: PathBuf,
        #[arg(long, default_value_t = 5)]
        beam: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank monolingual sentences by n-gram overlap with a test set
    Select {
        #[arg(long)]
        mono: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = DEFAULT_N_MAX)]
        nmax: usize,
        #[arg(long, default_value_t = DEFAULT_DECAY)]
        decay: f64,
        /// Ranking TSV (standard output if omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score translations by model confidence
    QeScore {
        #[command(flatten)]
        model: ModelArgs,
        /// Source sentences
        #[arg(long)]
        src: PathBuf,
        /// Their translations
        #[arg(long)]
        tgt: PathBuf,
        /// Keep only the m most confident
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Corpus BLEU of hypotheses, or of a checkpoint's translations of --test
    Evaluate {
        /// References
        #[arg(long)]
        tgt: PathBuf,
        /// Hypotheses
        #[arg(long, conflicts_with = "checkpoint")]
        src: Option<PathBuf>,
        #[arg(long, requires_all = ["merges", "vocab", "test"])]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        merges: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        beam: usize,
    },
    /// Baseline plus one self-training run
    Selftrain {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
    },
    /// Baseline plus iterative self-training over the config schedule
    Iterate(RunArgs),
    /// Report table and figure from run manifests
    Report {
        #[arg(required = true)]
        manifests: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (overrides the config)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub merges: PathBuf,
    /// Vocabulary prefix: reads PREFIX.src and PREFIX.tgt
    #[arg(long)]
    pub vocab: PathBuf,
}

struct Loaded {
    model: Seq2Seq<f64>,
    merges: MergeTable,
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
}

fn with_suffix(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn load_model(m: &ModelArgs) -> Result<Loaded> {
    let ck = Checkpoint::<f64>::load(&m.checkpoint)?;
    let src_vocab = Vocabulary::load(&with_suffix(&m.vocab, "src"))?;
    let tgt_vocab = Vocabulary::load(&with_suffix(&m.vocab, "tgt"))?;
    if src_vocab.len() != ck.config.src_vocab || tgt_vocab.len() != ck.config.tgt_vocab {
        return Err(Error::Input(format!(
            "vocabulary sizes {}/{} do not match the checkpoint's {}/{}",
            src_vocab.len(),
            tgt_vocab.len(),
            ck.config.src_vocab,
            ck.config.tgt_vocab
        )));
    }
    Ok(Loaded {
        model: Seq2Seq::new(ck.config, ck.params)?,
        merges: MergeTable::load(&m.merges)?,
        src_vocab,
        tgt_vocab,
    })
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e)),
    }
}

fn translate_lines(l: &Loaded, lines: &[String], mode: DecodeMode) -> Result<Vec<String>> {
    let mut ap = BpeApplier::new(&l.merges);
    let ids: Vec<Vec<usize>> = lines.iter().map(|s| l.src_vocab.encode(&ap.apply(s))).collect();
    let mut out = vec![String::new(); lines.len()];
    let keep: Vec<usize> = (0..ids.len()).filter(|&i| !ids[i].is_empty()).collect();
    let batch: Vec<Vec<usize>> = keep.iter().map(|&i| ids[i].clone()).collect();
    for (i, h) in keep.into_iter().zip(l.model.translate_all(&batch, mode, 64)?) {
        out[i] = debpe(&l.tgt_vocab.decode(h.content()));
    }
    Ok(out)
}

fn experiment(run: &RunArgs) -> Result<Experiment> {
    let mut cfg = ExperimentConfig::load(&run.config)?;
    if let Some(s) = run.seed {
        cfg.seed = s;
    }
    if let Some(o) = &run.out {
        cfg.out = o.clone();
    }
    let mut exp = Experiment::prepare(cfg)?;
    eprint!("{}", exp.prepared.data.stats());
    exp.log = Box::new(|m| eprintln!("{m}"));
    Ok(exp)
}

fn write_outputs(exp: &Experiment) -> Result<()> {
    write_report(&exp.config.out, &[&exp.manifest])
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::LearnBpe { src, tgt, num_merges, out } => {
            let mut lines = corpus::read_lines(&src)?;
            if let Some(t) = tgt {
                lines.extend(corpus::read_lines(&t)?);
            }
            learn_bpe(&lines, num_merges)?.save(&out)
        }
        Command::ApplyBpe { merges, src, out } => {
            let table = MergeTable::load(&merges)?;
            let mut ap = BpeApplier::new(&table);
            let lines: Vec<String> = corpus::read_lines(&src)?.iter().map(|l| ap.apply(l)).collect();
            emit(out.as_deref(), &corpus::join_lines(&lines))
        }
        Command::BuildVocab { src, size, out } => {
            let lines = corpus::read_lines(&src)?;
            eprintln!("{}\t{}", src.display(), CorpusStats::of(&lines));
            Vocabulary::build(&lines, size)?.save(&out)
        }
        Command::Train(run) => {
            let mut exp = experiment(&run)?;
            exp.run_baseline()?;
            write_outputs(&exp)
        }
        Command::Translate { model, src, beam, out } => {
            let l = load_model(&model)?;
            let lines = corpus::read_lines(&src)?;
            let mode = if beam <= 1 { DecodeMode::Greedy } else { DecodeMode::Beam(beam) };
            emit(out.as_deref(), &corpus::join_lines(&translate_lines(&l, &lines, mode)?))
        }
        Command::Select { mono, test, n, nmax, decay, out } => {
            let mono = corpus::read_lines(&mono)?;
            let test = corpus::read_lines(&test)?;
            let table = FeatureTable::extract(&test, nmax)?;
            let mut sel = Selector::new(&mono, table, decay)?;
            sel.next_slice(n)?;
            emit(out.as_deref(), &sel.ranking().to_tsv())
        }
        Command::QeScore { model, src, tgt, m, out } => {
            let l = load_model(&model)?;
            let pairs = corpus::load_parallel(&src, &tgt)?;
            let mut ap = BpeApplier::new(&l.merges);
            let enc: Vec<(Vec<usize>, Vec<usize>)> = pairs
                .iter()
                .map(|p| (l.src_vocab.encode(&ap.apply(&p.source)), l.tgt_vocab.encode(&ap.apply(&p.target))))
                .collect();
            let scored = score_all(&ModelConfidence { model: &l.model }, &enc, 64)?;
            let kept = match m {
                Some(m) => select_best(&scored, m)?,
                None => scored,
            };
            let targets: Vec<String> = kept.iter().map(|s| pairs[s.index].target.clone()).collect();
            emit(out.as_deref(), &scores_tsv(&kept, &targets))
        }
        Command::Evaluate { tgt, src, checkpoint, merges, vocab, test, beam } => {
            let refs = corpus::read_lines(&tgt)?;
            let hyps = match (src, checkpoint) {
                (Some(h), None) => corpus::read_lines(&h)?,
                (None, Some(ck)) => {
                    let l = load_model(&ModelArgs { checkpoint: ck, merges: merges.unwrap(), vocab: vocab.unwrap() })?;
                    let mode = if beam <= 1 { DecodeMode::Greedy } else { DecodeMode::Beam(beam) };
                    translate_lines(&l, &corpus::read_lines(&test.unwrap())?, mode)?
                }
                _ => return Err(Error::Input("evaluate needs --src hypotheses or --checkpoint".into())),
            };
            let report = corpus_bleu(&hyps, &refs)?;
            emit(None, &(serde_json::to_string(&report).expect("report serializes") + "\n"))
        }
        Command::Selftrain { run, n, m } => {
            let mut exp = experiment(&run)?;
            if n.is_some() {
                exp.config.n = n;
            }
            if m.is_some() {
                exp.config.m = m;
            }
            exp.config.validate()?;
            exp.manifest.config = exp.config.to_pairs();
            exp.run_baseline()?;
            exp.run_selftrain(exp.config.n, exp.config.m)?;
            write_outputs(&exp)
        }
        Command::Iterate(run) => {
            let mut exp = experiment(&run)?;
            let schedule = exp.config.schedule.clone();
            if schedule.len() < 2 {
                return Err(Error::Config("iterate needs a schedule with at least two entries".into()));
            }
            exp.run_baseline()?;
            exp.run_iterative(&schedule)?;
            write_outputs(&exp)
        }
        Command::Report { manifests, out } => {
            let loaded: Vec<RunManifest> = manifests.iter().map(|p| RunManifest::load(p)).collect::<Result<_>>()?;
            let refs: Vec<&RunManifest> = loaded.iter().collect();
            write_report(&out, &refs)
        }
    }
}

/// Parse arguments and run; returns the process exit status.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn help_exits_zero() {
        assert_eq!(dispatch(["slnmt", "report", "--help"]), 0);
    }

    #[test]
    fn unknown_command_and_flag_are_usage_errors() {
        assert_eq!(dispatch(["slnmt", "frobnicate"]), 2);
        assert_eq!(dispatch(["slnmt", "select", "--bogus"]), 2);
    }

    #[test]
    fn missing_required_flag_is_usage_error() {
        let e = Cli::try_parse_from(["slnmt", "select", "--mono", "m.txt", "--n", "3"]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("--test"));
    }

    #[test]
    fn runtime_failure_exits_one() {
        assert_eq!(dispatch(["slnmt", "build-vocab", "--src", "/no/such/file", "--out", "/tmp/x"]), 1);
    }

    #[test]
    fn select_writes_ranking() {
        let d = tempfile::tempdir().unwrap();
        let mono = d.path().join("mono");
        let test = d.path().join("test");
        let out = d.path().join("rank.tsv");
        fs::write(&mono, "a b\na a\nc\n").unwrap();
        fs::write(&test, "a b\n").unwrap();
        let args = ["slnmt", "select", "--mono", mono.to_str().unwrap(), "--test", test.to_str().unwrap(), "--n", "3", "--nmax", "1", "--out", out.to_str().unwrap()];
        assert_eq!(dispatch(args), 0);
        assert_eq!(fs::read_to_string(&out).unwrap(), "1\t0\t1.0\n2\t1\t0.25\n3\t2\t0.0\n");
    }

    #[test]
    fn bpe_commands_round_trip() {
        let d = tempfile::tempdir().unwrap();
        let src = d.path().join("src");
        fs::write(&src, "low low lower\nnewest widest\n").unwrap();
        let merges = d.path().join("merges");
        let seg = d.path().join("seg");
        let vocab = d.path().join("vocab");
        let p = |x: &PathBuf| x.to_str().unwrap().to_string();
        assert_eq!(dispatch(["slnmt", "learn-bpe", "--src", &p(&src), "--num-merges", "5", "--out", &p(&merges)]), 0);
        assert_eq!(dispatch(["slnmt", "apply-bpe", "--merges", &p(&merges), "--src", &p(&src), "--out", &p(&seg)]), 0);
        assert_eq!(dispatch(["slnmt", "build-vocab", "--src", &p(&seg), "--out", &p(&vocab)]), 0);
        let segmented = corpus::read_lines(&seg).unwrap();
        let restored: Vec<String> = segmented.iter().map(|l| debpe(l)).collect();
        assert_eq!(restored, corpus::read_lines(&src).unwrap());
        assert!(Vocabulary::load(&vocab).is_ok());
    }
}
