mod common;

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{brute_force, random_corpus};
use slnmt::fda::{fraction, select, FeatureTable, Selector};
use slnmt::qe::{select_best_indices, ScoredTranslation};

#[test]
fn lazy_selection_equals_brute_force_greedy() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..200 {
        let corpus = random_corpus(&mut rng, 50);
        let mut test = random_corpus(&mut rng, 5);
        if test.iter().all(|t| t.is_empty()) {
            test.push("a b".into());
        }
        let n_max = rng.gen_range(1..=3);
        let decay = [0.5, 0.25, 0.9][case % 3];
        let table = FeatureTable::extract(&test, n_max).unwrap();
        let lazy = select(&corpus, table, corpus.len(), decay).unwrap();
        assert_eq!(lazy.ranking().entries, brute_force(&corpus, &test, n_max, decay), "case {case}");
    }
}

#[test]
fn selecting_then_extending_equals_selecting_more() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..100 {
        let corpus = random_corpus(&mut rng, 50);
        let test = vec!["a b c".to_string(), "d e".to_string()];
        let total = corpus.len();
        let n = rng.gen_range(1..=total);
        let k = rng.gen_range(0..=total - n);
        let table = FeatureTable::extract(&test, 3).unwrap();
        let mut part = select(&corpus, table.clone(), n, 0.5).unwrap();
        let slice = part.next_slice(k).unwrap();
        let whole = select(&corpus, table, n + k, 0.5).unwrap();
        assert_eq!(part.ranking(), whole.ranking(), "case {case}");
        assert_eq!(&whole.ranking().entries[n..], &slice[..]);
    }
}

#[test]
fn several_slices_compose() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let corpus = random_corpus(&mut rng, 50);
    let table = FeatureTable::extract(&["a b", "c"], 2).unwrap();
    let mut s = Selector::new(&corpus, table.clone(), 0.5).unwrap();
    let mut got = Vec::new();
    while s.remaining() > 0 {
        let k = s.remaining().min(3);
        got.extend(s.next_slice(k).unwrap());
    }
    let all = select(&corpus, table, corpus.len(), 0.5).unwrap();
    assert_eq!(got, all.ranking().entries);
}

#[test]
fn selection_is_a_permutation_prefix() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let corpus = random_corpus(&mut rng, 50);
    let n = corpus.len() / 2 + 1;
    let sel = select(&corpus, FeatureTable::extract(&["a b c d"], 3).unwrap(), n, 0.5).unwrap();
    let idx = sel.ranking().indices();
    assert_eq!(idx.len(), n);
    assert_eq!(idx.iter().collect::<BTreeSet<_>>().len(), n);
}

#[test]
fn full_scale_quantities() {
    // a third of the monolingual corpus, then three keep sizes
    let selected = fraction(399_951, 3);
    assert_eq!(selected, 133_317);
    for m in [100_000, 50_000, 25_000] {
        assert!(m < selected);
    }
    // iterative schedule: 200k then 300k cumulative selections stay within the corpus
    assert!(slnmt::pipeline::check_schedule(&[(200_000, 100_000), (300_000, 150_000)]).is_ok());
}

#[test]
fn qe_ranking_keeps_original_order_and_breaks_ties_low() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let n = rng.gen_range(1..40);
        // coarse values make ties common
        let conf: Vec<f64> = (0..n).map(|_| -(rng.gen_range(0..6) as f64) / 2.0).collect();
        let m = rng.gen_range(1..=n);
        let keep = select_best_indices(&conf, m).unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| conf[b].partial_cmp(&conf[a]).unwrap().then(a.cmp(&b)));
        let mut expect = order[..m].to_vec();
        expect.sort();
        assert_eq!(keep, expect);
    }
}

#[test]
fn confidence_is_length_normalized() {
    let short = ScoredTranslation::from_logprobs(0, vec![4], vec![5], vec![-0.5, -0.5]).unwrap();
    let long = ScoredTranslation::from_logprobs(1, vec![4], vec![5, 6, 7], vec![-0.5; 4]).unwrap();
    assert_eq!(short.confidence, long.confidence);
}
