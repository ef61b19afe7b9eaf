use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tablemb::corruption::{corrupt_freq, corrupt_mix, corrupt_swap};
use tablemb::index::{kmeans, EmbeddingIndex, EmbeddingKey, KMeansConfig, Metric};
use tablemb::metrics::{average_precision, ndcg_at_k, rank_labels, reciprocal_rank};
use tablemb::training::pack_batches;
use tablemb::{build_cell_vocabulary, truncate_table, EmbeddingKind, SwapConstraint, Table, TruncationLimits};

fn table_strategy() -> impl Strategy<Value = Table> {
    (1usize..8, 1usize..6, any::<bool>()).prop_flat_map(|(rows, cols, header)| {
        let cell = "[a-c]{0,3}";
        (
            proptest::collection::vec(proptest::collection::vec(cell, cols), rows),
            proptest::collection::vec(cell, cols),
        )
            .prop_map(move |(body, h)| Table::new("p", header.then_some(h), body).unwrap())
    })
}

proptest! {
    #[test]
    fn truncation_is_idempotent_and_bounded(t in table_strategy(), r in 1usize..6, c in 1usize..5, k in 0usize..4) {
        let limits = TruncationLimits { max_rows: r, max_cols: c, max_cell_chars: k };
        let once = truncate_table(&t, &limits);
        prop_assert_eq!(&truncate_table(&once, &limits), &once);
        prop_assert!(once.num_rows() <= r && once.num_cols() <= c);
        prop_assert!(once.content_rows(true).iter().flat_map(|row| row.iter()).all(|s| s.chars().count() <= k));
    }

    #[test]
    fn vocabulary_counts_every_cell(ts in proptest::collection::vec(table_strategy(), 1..5)) {
        let vocab = build_cell_vocabulary(ts.iter(), usize::MAX).unwrap();
        let cells: usize = ts.iter().map(|t| t.content_height(true) * t.num_cols()).sum();
        prop_assert_eq!(vocab.total(), cells as u64);
        let p: f64 = vocab.entries().iter().map(|(s, _)| vocab.probability(s)).sum();
        prop_assert!(vocab.is_empty() || (p - 1.0).abs() < 1e-9);
    }

    #[test]
    fn corruption_labels_are_sound(t in table_strategy(), rate in 0.01f64..0.9, seed in any::<u64>(), pairs in 0usize..5) {
        let vocab = build_cell_vocabulary([&t], usize::MAX).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if !vocab.is_empty() {
            prop_assert!(corrupt_freq(&t, &vocab, rate, &mut rng).is_sound(&t));
            prop_assert!(corrupt_mix(&t, &vocab, rate, &mut rng).is_sound(&t));
        }
        for c in [SwapConstraint::Any, SwapConstraint::SameRow, SwapConstraint::SameCol] {
            let rec = corrupt_swap(&t, c, pairs, &mut rng);
            prop_assert!(rec.is_sound(&t));
            prop_assert!(rec.num_corrupted() <= 2 * pairs);
        }
    }

    #[test]
    fn packing_respects_the_budget(sizes in proptest::collection::vec(1usize..50, 0..40), budget in 50usize..200) {
        let batches = pack_batches(&sizes, budget).unwrap();
        let flat: Vec<usize> = batches.iter().flatten().copied().collect();
        prop_assert_eq!(flat, (0..sizes.len()).collect::<Vec<_>>());
        for b in &batches {
            prop_assert!(b.iter().map(|&i| sizes[i]).sum::<usize>() <= budget);
        }
    }

    #[test]
    fn ranking_metrics_ignore_monotone_transforms(
        scores in proptest::collection::vec(-5.0f64..5.0, 1..30),
        gold_mask in proptest::collection::vec(any::<bool>(), 30),
        scale in 0.1f64..10.0,
        shift in -3.0f64..3.0,
    ) {
        let gold: Vec<usize> = (0..scores.len()).filter(|&i| gold_mask[i]).collect();
        prop_assume!(!gold.is_empty());
        let a = rank_labels(&scores);
        let transformed: Vec<f64> = scores.iter().map(|s| (s * scale + shift).exp()).collect();
        let b = rank_labels(&transformed);
        prop_assert_eq!(average_precision(&a, &gold), average_precision(&b, &gold));
        prop_assert_eq!(reciprocal_rank(&a, &gold), reciprocal_rank(&b, &gold));
        for k in [10, 20] {
            let v = ndcg_at_k(&a, &gold, k).unwrap();
            prop_assert_eq!(Some(v), ndcg_at_k(&b, &gold, k));
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        }
        let ap = average_precision(&a, &gold).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ap));
    }

    #[test]
    fn knn_matches_a_full_scan(
        vs in proptest::collection::vec(proptest::collection::vec(-1.0f32..1.0, 4), 1..40),
        q in proptest::collection::vec(-1.0f32..1.0, 4),
        k in 1usize..10,
    ) {
        let mut index = EmbeddingIndex::new(Metric::Euclidean, 4);
        for (i, v) in vs.iter().enumerate() {
            let key = EmbeddingKey { table: format!("{i:03}"), kind: EmbeddingKind::Table };
            index.insert(key, v.clone()).unwrap();
        }
        let k = k.min(vs.len());
        let got = index.knn(&q, k).unwrap();
        let mut all: Vec<(f64, usize)> = vs
            .iter()
            .enumerate()
            .map(|(i, v)| (v.iter().zip(&q).map(|(a, b)| (f64::from(*a) - f64::from(*b)).powi(2)).sum::<f64>().sqrt(), i))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (g, (d, i)) in got.iter().zip(&all) {
            prop_assert_eq!(&g.key.table, &format!("{i:03}"));
            prop_assert!((g.distance - d).abs() < 1e-9);
        }
    }

    #[test]
    fn kmeans_inertia_never_increases(
        vs in proptest::collection::vec(proptest::collection::vec(-3.0f32..3.0, 3), 2..60),
        k in 1usize..6,
        seed in any::<u64>(),
    ) {
        let k = k.min(vs.len());
        let res = kmeans(&vs, &KMeansConfig { k, max_iters: 30, seed }).unwrap();
        prop_assert_eq!(res.assignments.len(), vs.len());
        prop_assert!(res.assignments.iter().all(|&c| c < k));
        for w in res.inertia_history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
        }
    }
}
