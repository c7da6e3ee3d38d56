use proptest::prelude::*;

use slnmt::bpe::{apply_bpe, debpe, learn_bpe, BpeApplier};
use slnmt::eval::{corpus_bleu, should_stop};
use slnmt::toy::{generate, ToyConfig};
use slnmt::vocab::Vocabulary;

#[test]
fn bpe_round_trips_every_toy_line() {
    let toy = generate(&ToyConfig::default());
    let joint: Vec<&String> = toy.train_src.iter().chain(&toy.train_tgt).collect();
    for merges in [0, 50, 10_000] {
        let table = learn_bpe(&joint, merges).unwrap();
        let mut ap = BpeApplier::new(&table);
        for line in toy.train_src.iter().chain(&toy.train_tgt).chain(&toy.mono_src).chain(&toy.dev_src).chain(&toy.test_tgt) {
            assert_eq!(&debpe(&ap.apply(line)), line);
        }
    }
}

#[test]
fn first_merge_of_low_lower() {
    let table = learn_bpe(&["low low lower"], 1).unwrap();
    assert_eq!(table.merges()[0], ("l".to_string(), "o".to_string()));
}

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec("[a-e]{1,6}", 1..8).prop_map(|w| w.join(" "))
}

proptest! {
    #[test]
    fn bpe_round_trip(corpus in prop::collection::vec(sentence(), 1..12), merges in 0usize..40, probe in sentence()) {
        let table = learn_bpe(&corpus, merges).unwrap();
        for line in corpus.iter().chain(std::iter::once(&probe)) {
            let seg = apply_bpe(line, &table);
            prop_assert_eq!(&debpe(&seg), line);
        }
    }

    #[test]
    fn vocabulary_round_trips_known_tokens(corpus in prop::collection::vec(sentence(), 1..12)) {
        let v = Vocabulary::build(&corpus, 10_000).unwrap();
        for line in &corpus {
            prop_assert_eq!(&v.decode(&v.encode(line)), line);
        }
    }
}

#[test]
fn bleu_identity_and_clipping() {
    let r = corpus_bleu(&["the cat sat on the mat"], &["the cat sat on the mat"]).unwrap();
    assert_eq!(r.score, 100.0);
    let r = corpus_bleu(&["the the the"], &["the cat"]).unwrap();
    assert!((r.precisions[0] - 1.0 / 3.0).abs() < 1e-12);
}

/// Values from a separate implementation of the same definition.
#[test]
fn bleu_matches_reference_implementation() {
    let cases: [(&[&str], &[&str], f64, [f64; 4]); 4] = [
        (
            &["the cat sat on the mat", "a dog barked loudly at night"],
            &["the cat sat on a mat", "the dog barked at night"],
            35.35533905932737,
            [0.75, 0.5, 0.25, 0.16666666666666666],
        ),
        (
            &["he reads the book every day", "she went to the market", "it rains"],
            &["he reads a book every single day", "she walked to the market yesterday", "it is raining today"],
            21.507392745078405,
            [0.7692307692307693, 0.4, 0.14285714285714285, 0.16666666666666666],
        ),
        (
            &["one two three four five six", "alpha beta", "x y z"],
            &["one two three four five six seven", "beta alpha gamma", "x z y"],
            70.10998400167432,
            [1.0, 0.625, 0.8, 1.0],
        ),
        (&["the the the"], &["the cat"], 48.549177170732335, [1.0 / 3.0, 1.0 / 3.0, 0.5, 1.0]),
    ];
    for (hyp, refs, score, p) in cases {
        let r = corpus_bleu(hyp, refs).unwrap();
        assert!((r.score - score).abs() < 1e-9, "{} vs {score}", r.score);
        for n in 0..4 {
            assert!((r.precisions[n] - p[n]).abs() < 1e-9);
        }
    }
}

#[test]
fn stop_rule_cases() {
    assert!(should_stop(&[10.0, 20.0, 20.05, 20.10, 20.15, 20.18], 4, 0.2));
    assert!(!should_stop(&[10.0, 20.0, 20.05, 20.10, 20.15, 20.25], 4, 0.2));
    assert!(!should_stop(&[1.0, 2.0, 3.0], 4, 0.2));
}

proptest! {
    #[test]
    fn stop_rule_never_fires_on_real_improvement(prefix in prop::collection::vec(0.0f64..50.0, 1..10),
                                                 window in prop::collection::vec(0.0f64..50.0, 4), gain in 0.201f64..10.0, at in 0usize..4) {
        let best = prefix.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut w = window;
        w[at] = best + gain;
        let mut h = prefix;
        h.extend(w);
        prop_assert!(!should_stop(&h, 4, 0.2));
    }
}
