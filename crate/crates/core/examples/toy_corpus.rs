//! Write the synthetic toy corpora to a directory.
//!
//! Usage: toy_corpus DIR [seed]

use slnmt::pipeline::Datasets;
use slnmt::toy::{generate, ToyConfig};

fn main() -> slnmt::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().expect("usage: toy_corpus DIR [seed]");
    let seed = args.next().map_or(1, |s| s.parse().expect("seed"));
    let c = generate(&ToyConfig { seed, ..ToyConfig::default() });
    let data = Datasets {
        train_src: c.train_src,
        train_tgt: c.train_tgt,
        mono: c.mono_src,
        dev_src: c.dev_src,
        dev_tgt: c.dev_tgt,
        test_src: c.test_src,
        test_tgt: c.test_tgt,
    };
    data.save(dir.as_ref())?;
    print!("{}", data.stats());
    Ok(())
}
