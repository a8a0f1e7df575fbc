use std::collections::BTreeMap;

use proptest::prelude::*;

use vtlkws_core::augment::{resample_speed, time_shift, AugmentPolicy, Augmenter};
use vtlkws_core::dataset::fit_length;
use vtlkws_core::frontend::FrameSpec;
use vtlkws_core::inference::fuse_scores;
use vtlkws_core::model::ScoreVector;
use vtlkws_core::seed;
use vtlkws_core::stats::{accuracy, confidence_interval, ttest_two_sample, ScoreRow, TTestKind};
use vtlkws_core::warp::{build_warped_filterbank, default_grid, warp_frequency, WarpConfig, WarpFactor};

fn grid_alpha() -> impl Strategy<Value = WarpFactor> {
    (0usize..21).prop_map(|i| default_grid().factors()[i])
}

fn distribution(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-6f64..1.0, k).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    #[test]
    fn warp_is_continuous_at_the_breakpoint(alpha in grid_alpha(), f0 in prop::sample::select(vec![20.0, 100.0, 1000.0])) {
        let cfg = WarpConfig::new(f0, 6800.0).unwrap();
        let at = warp_frequency(alpha, f0, &cfg).unwrap();
        prop_assert!((at - alpha.alpha() * f0).abs() < 1e-9);
        let below = warp_frequency(alpha, f0 * (1.0 - 1e-12), &cfg).unwrap();
        let above = warp_frequency(alpha, f0 * (1.0 + 1e-12), &cfg).unwrap();
        prop_assert!((below - above).abs() < 1e-6);
    }

    #[test]
    fn warp_fixes_the_upper_edge(alpha in grid_alpha()) {
        let cfg = WarpConfig::default();
        prop_assert!((warp_frequency(alpha, cfg.f_m_hz, &cfg).unwrap() - cfg.f_m_hz).abs() < 1e-9);
        prop_assert_eq!(warp_frequency(alpha, 0.0, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn warp_is_strictly_increasing(alpha in grid_alpha(), a in 0.0f64..6800.0, b in 0.0f64..6800.0) {
        prop_assume!((a - b).abs() > 1e-6);
        let cfg = WarpConfig::default();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(warp_frequency(alpha, lo, &cfg).unwrap() < warp_frequency(alpha, hi, &cfg).unwrap());
    }

    #[test]
    fn unit_warp_is_identity(f in 0.0f64..6800.0) {
        let cfg = WarpConfig::default();
        prop_assert!((warp_frequency(WarpFactor::ONE, f, &cfg).unwrap() - f).abs() < 1e-12);
    }

    #[test]
    fn filterbank_rows_are_positive_and_contiguous(alpha in grid_alpha()) {
        let fb = build_warped_filterbank(alpha, &WarpConfig::default(), 40, 512, 16000).unwrap();
        for row in fb.weights.rows() {
            prop_assert!(row.sum() > 0.0);
            let support: Vec<usize> = row.iter().enumerate().filter(|(_, w)| **w > 0.0).map(|(i, _)| i).collect();
            prop_assert_eq!(support.last().unwrap() - support[0] + 1, support.len());
        }
    }

    #[test]
    fn frame_count_formula(n in 480usize..40_000) {
        prop_assert_eq!(FrameSpec::default().frame_count(n), Some(1 + (n - 480) / 160));
    }

    #[test]
    fn canonical_length(n in 1usize..40_000) {
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        prop_assert_eq!(fit_length(&x, 16000).len(), 16000);
    }

    #[test]
    fn signal_augmentation_keeps_length_and_range(shift in -100.0f64..100.0, factor in 0.85f64..1.15, seed_v in 0u64..1000) {
        let x: Vec<f64> = (0..16000).map(|i| 0.9 * (i as f64 * 0.05).sin()).collect();
        let shifted = time_shift(&x, shift, 16000);
        prop_assert_eq!(shifted.len(), 16000);
        let stretched = resample_speed(&x, factor);
        prop_assert_eq!(stretched.len(), 16000);
        let aug = Augmenter::new(AugmentPolicy { probability: 1.0, ..AugmentPolicy::default() }, vec![vec![0.5; 4000]]).unwrap();
        let y = aug.apply_signal(&x, 16000, &mut seed::rng(seed_v));
        prop_assert_eq!(y.len(), 16000);
        prop_assert!(y.iter().all(|v| v.is_finite() && v.abs() <= 1.0));
        prop_assert_eq!(y, aug.apply_signal(&x, 16000, &mut seed::rng(seed_v)));
    }

    #[test]
    fn fusion_of_copies_is_exact(v in distribution(35), k in 1usize..21) {
        let s = ScoreVector { posteriors: v };
        let m: BTreeMap<_, _> = default_grid().iter().take(k).map(|a| (a, s.clone())).collect();
        let f = fuse_scores(&m).unwrap();
        for (x, y) in f.posteriors.iter().zip(&s.posteriors) {
            prop_assert!((x - y).abs() <= 1e-15 * y.abs().max(1.0));
        }
    }

    #[test]
    fn fusion_is_permutation_invariant_and_stays_a_distribution(
        vs in prop::collection::vec(distribution(35), 2..21),
        seed_v in 0u64..1000,
    ) {
        let grid = default_grid();
        let m: BTreeMap<_, _> = grid.iter().zip(&vs).map(|(a, v)| (a, ScoreVector { posteriors: v.clone() })).collect();
        let mut shuffled = vs.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut seed::rng(seed_v));
        let p: BTreeMap<_, _> = grid.iter().zip(&shuffled).map(|(a, v)| (a, ScoreVector { posteriors: v.clone() })).collect();
        let (f, g) = (fuse_scores(&m).unwrap(), fuse_scores(&p).unwrap());
        for (x, y) in f.posteriors.iter().zip(&g.posteriors) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        prop_assert!(f.is_distribution(1e-6));
    }

    #[test]
    fn adding_a_constant_keeps_the_prediction(vs in prop::collection::vec(distribution(35), 1..21), c in -5.0f64..5.0) {
        let grid = default_grid();
        let m: BTreeMap<_, _> = grid.iter().zip(&vs).map(|(a, v)| (a, ScoreVector { posteriors: v.clone() })).collect();
        let shifted: BTreeMap<_, _> = m
            .iter()
            .map(|(a, s)| (*a, ScoreVector { posteriors: s.posteriors.iter().map(|p| p + c).collect() }))
            .collect();
        let base = fuse_scores(&m).unwrap();
        let moved = fuse_scores(&shifted).unwrap();
        // Skip near-ties where the shift's rounding could legitimately reorder.
        let mut sorted = base.posteriors.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        prop_assume!(sorted[0] - sorted[1] > 1e-9);
        prop_assert_eq!(base.argmax(), moved.argmax());
    }

    #[test]
    fn ttest_is_antisymmetric(
        a in prop::collection::vec(90.0f64..100.0, 2..12),
        b in prop::collection::vec(90.0f64..100.0, 2..12),
        welch in any::<bool>(),
    ) {
        let kind = if welch { TTestKind::Welch } else { TTestKind::Student };
        let ab = ttest_two_sample(&a, &b, kind, 0.05).unwrap();
        let ba = ttest_two_sample(&b, &a, kind, 0.05).unwrap();
        prop_assert!((ab.t_statistic + ba.t_statistic).abs() < 1e-9);
        prop_assert!((ab.p_value - ba.p_value).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab.p_value));
        prop_assert_eq!(ab.significant, ab.p_value < 0.05);
    }

    #[test]
    fn ci_shrinks_with_more_runs(base in prop::collection::vec(90.0f64..100.0, 2..8)) {
        let (_, h1) = confidence_interval(&base, 0.95).unwrap();
        prop_assert!(h1 >= 0.0);
        // Doubling each value's multiplicity keeps the spread comparable and grows n.
        let doubled: Vec<f64> = base.iter().chain(base.iter()).copied().collect();
        let (_, h2) = confidence_interval(&doubled, 0.95).unwrap();
        prop_assert!(h2 <= h1 + 1e-12);
    }

    #[test]
    fn accuracy_ignores_row_order(labels in prop::collection::vec((0usize..3, 0usize..3), 1..40), seed_v in 0u64..1000) {
        let classes = vec!["a".to_string(), "b".into(), "c".into()];
        let rows: Vec<ScoreRow> = labels
            .iter()
            .enumerate()
            .map(|(i, &(l, p))| ScoreRow { id: format!("u{i}"), label: l, predicted: p, posteriors: vec![1.0 / 3.0; 3] })
            .collect();
        let mut shuffled = rows.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut seed::rng(seed_v));
        prop_assert_eq!(accuracy("m", &classes, &rows, None).unwrap(), accuracy("m", &classes, &shuffled, None).unwrap());
    }
}
