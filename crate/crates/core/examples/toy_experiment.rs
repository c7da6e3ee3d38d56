//! Baseline vs self-training on the synthetic toy task.
//!
//! Usage: toy_experiment [key=value ...] where keys are experiment config
//! keys or `toy.<field>` for the toy generator, plus `methods=sl,ds-qe:n:m,...`.

use std::time::Instant;

use slnmt::pipeline::{emit_report, Datasets, Experiment, ExperimentConfig};
use slnmt::toy::{generate, ToyConfig};

fn main() -> slnmt::Result<()> {
    let mut toy = ToyConfig::default();
    let mut cfg_lines = String::new();
    let mut methods = "sl,ds-qe:5334:2000".to_string();
    for arg in std::env::args().skip(1) {
        let (k, v) = arg.split_once('=').expect("key=value");
        match k {
            "methods" => methods = v.to_string(),
            "toy.words_per_domain" => toy.words_per_domain = v.parse().unwrap(),
            "toy.authentic_in_domain" => toy.authentic_in_domain = v.parse().unwrap(),
            "toy.monolingual_in_domain" => toy.monolingual_in_domain = v.parse().unwrap(),
            "toy.noise" => toy.noise = v.parse().unwrap(),
            "toy.zipf" => toy.zipf = v.parse().unwrap(),
            "toy.seed" => toy.seed = v.parse().unwrap(),
            "toy.min_len" => toy.min_len = v.parse().unwrap(),
            "toy.max_len" => toy.max_len = v.parse().unwrap(),
            _ => cfg_lines.push_str(&format!("{k}={v}\n")),
        }
    }
    let cfg = ExperimentConfig::parse(&cfg_lines, "args".as_ref(), ".".as_ref())?;
    let c = generate(&toy);
    let data = Datasets {
        train_src: c.train_src,
        train_tgt: c.train_tgt,
        mono: c.mono_src,
        dev_src: c.dev_src,
        dev_tgt: c.dev_tgt,
        test_src: c.test_src,
        test_tgt: c.test_tgt,
    };
    println!("{}", data.stats());
    let t0 = Instant::now();
    let mut exp = Experiment::with_data(cfg, data)?;
    exp.log = Box::new(move |m| eprintln!("[{:>6.1}s] {m}", t0.elapsed().as_secs_f64()));
    println!("vocab src {} tgt {}", exp.prepared.src_vocab.len(), exp.prepared.tgt_vocab.len());
    exp.run_baseline()?;
    for m in methods.split(',').filter(|m| !m.is_empty()) {
        let parts: Vec<&str> = m.split(':').collect();
        let num = |i: usize| parts.get(i).map(|s| s.parse::<usize>().unwrap());
        match parts[0] {
            "sl" => exp.run_selftrain(None, None)?,
            "ds" => exp.run_selftrain(num(1), None)?,
            "qe" => exp.run_selftrain(None, num(1))?,
            "ds-qe" => exp.run_selftrain(num(1), num(2))?,
            other => panic!("unknown method {other}"),
        };
    }
    let (tsv, _) = emit_report(&[&exp.manifest]);
    print!("{tsv}");
    println!("total {:.1}s", t0.elapsed().as_secs_f64());
    Ok(())
}
