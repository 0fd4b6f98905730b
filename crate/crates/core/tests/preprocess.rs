use offense_core::corpus::{
    deduplicate, kfold_split, kfold_split_stratified, normalize_tweet, preprocess, read_lines, sample_corpus, write_lines,
    LabeledExample, TweetRecord,
};
use offense_core::Label;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PIECES: [&str; 14] = [
    "@USER", "URL", "http://t.co/x", "HTTPS://a.b", "@a_b", "@", "@@x", "#tag", "word", "Mixed", "emoji🙂", "url", " ", "\t",
];

fn fuzz_tweet(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(0..15);
    let mut s = String::new();
    for _ in 0..n {
        s.push_str(PIECES[rng.random_range(0..PIECES.len())]);
        match rng.random_range(0..4) {
            0 => {}
            1 => s.push(' '),
            2 => s.push_str("  "),
            _ => s.push('\n'),
        }
    }
    s
}

#[test]
fn normalize_idempotent_on_fuzz_corpus() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10_000 {
        let t = fuzz_tweet(&mut rng);
        let once = normalize_tweet(&t);
        assert_eq!(normalize_tweet(&once), once, "{t:?}");
        assert!(!once.contains("  ") && once.trim() == once);
        assert!(once.split(' ').all(|w| !w.starts_with("http") && w != "URL" && w != "@USER"));
    }
}

proptest! {
    #[test]
    fn normalize_idempotent(text in ".{0,80}") {
        let once = normalize_tweet(&text);
        prop_assert_eq!(normalize_tweet(&once), once);
    }

    #[test]
    fn dedup_idempotent_and_shrinking(texts in prop::collection::vec("[ab]{0,3}", 0..40)) {
        let recs: Vec<TweetRecord> = texts.iter().enumerate().map(|(i, t)| TweetRecord::new(i.to_string(), t.clone())).collect();
        let once = deduplicate(recs.clone());
        prop_assert!(once.len() <= recs.len());
        prop_assert_eq!(deduplicate(once.clone()), once.clone());
        let distinct: std::collections::HashSet<&String> = texts.iter().collect();
        prop_assert_eq!(once.len(), distinct.len());
    }

    #[test]
    fn sampling_keeps_relative_order(n in 1usize..300, f in 0.001f64..=1.0, seed in any::<u64>()) {
        let recs: Vec<TweetRecord> = (0..n).map(|i| TweetRecord::new(i.to_string(), format!("t{i}"))).collect();
        let s = sample_corpus(&recs, f, seed).unwrap();
        prop_assert_eq!(s.len(), ((f * n as f64).round() as usize).clamp(1, n));
        let idx: Vec<usize> = s.iter().map(|r| r.id.parse().unwrap()).collect();
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(sample_corpus(&recs, f, seed).unwrap(), s);
    }

    #[test]
    fn folds_partition(n in 2usize..200, k in 2usize..12, seed in any::<u64>(), strat in any::<bool>()) {
        prop_assume!(k <= n);
        let ex: Vec<LabeledExample> = (0..n)
            .map(|i| LabeledExample::new(i.to_string(), "x", if i % 3 == 0 { Label::Off } else { Label::Not }))
            .collect();
        let a = if strat { kfold_split_stratified(&ex, k, seed) } else { kfold_split(&ex, k, seed) }.unwrap();
        let groups = a.fold_indices(&ex);
        prop_assert_eq!(groups.len(), k);
        let mut all: Vec<usize> = groups.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        let sizes = a.fold_sizes();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
}

#[test]
fn pipeline_counts_and_round_trip() {
    let mut recs = Vec::new();
    for i in 0..100 {
        recs.push(TweetRecord::new(format!("{i}"), format!("@USER tweet number {} URL", i % 80)));
    }
    recs.push(TweetRecord::new("x", "@USER URL"));
    let (out, stats) = preprocess(recs, 0.05, 7).unwrap();
    assert_eq!((stats.input, stats.non_empty, stats.deduplicated, stats.sampled), (101, 100, 80, 4));
    assert_eq!(out.len(), 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.txt");
    write_lines(&path, out.iter().map(|r| r.text.as_str())).unwrap();
    assert_eq!(read_lines(&path).unwrap(), out.iter().map(|r| r.text.clone()).collect::<Vec<_>>());
}
