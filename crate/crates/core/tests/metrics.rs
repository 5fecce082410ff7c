mod common;

use common::metric_oracles::{auc_oracle, f1_oracle, instance};
use forgeloc::metrics::*;
use forgeloc::{ForgeryMask, PixelProbMap};
use proptest::prelude::*;

#[test]
fn metrics_agree_with_oracles_on_random_instances() {
    for seed in 0..100 {
        let (map, mask, scores, labels) = instance(seed, 7, 9);
        let auc = pixel_auc(&map, &mask).unwrap();
        assert!((auc - auc_oracle(&scores, &labels)).abs() < 1e-12, "seed {seed}");
        for t in [0.25, 0.5, 0.75] {
            let f1 = pixel_f1(&map, &mask, t).unwrap();
            assert!((f1 - f1_oracle(&scores, &labels, t)).abs() < 1e-12, "seed {seed} t {t}");
        }
    }
}

#[test]
fn pooled_scores_use_the_concatenated_pixels() {
    let items: Vec<_> = (0..5)
        .map(|s| {
            let (m, g, _, _) = instance(100 + s, 4, 4);
            (format!("img{s}"), m, g)
        })
        .collect();
    let pooled = score_images(&items, 0.5, Aggregation::Pooled).unwrap();
    let all_scores: Vec<f64> = items.iter().flat_map(|(_, m, _)| m.data().to_vec()).collect();
    let all_labels: Vec<bool> = items.iter().flat_map(|(_, _, g)| g.data().iter().map(|&v| v == 1).collect::<Vec<_>>()).collect();
    assert!((pooled.auc - auc_oracle(&all_scores, &all_labels)).abs() < 1e-12);
    assert!((pooled.f1 - f1_oracle(&all_scores, &all_labels, 0.5)).abs() < 1e-12);

    let per = score_images(&items, 0.5, Aggregation::PerImage).unwrap();
    let mean_f1 = per.per_image.iter().map(|s| s.f1).sum::<f64>() / 5.0;
    assert!((per.f1 - mean_f1).abs() < 1e-15);
    assert_eq!(per.images, 5);
}

#[test]
fn perfect_and_inverted_rankings() {
    let mask = ForgeryMask::new(1, 4, vec![1, 1, 0, 0]).unwrap();
    let good = PixelProbMap::new(1, 4, vec![0.9, 0.8, 0.2, 0.1]).unwrap();
    let bad = PixelProbMap::new(1, 4, vec![0.1, 0.2, 0.8, 0.9]).unwrap();
    assert_eq!(pixel_auc(&good, &mask).unwrap(), 1.0);
    assert_eq!(pixel_auc(&bad, &mask).unwrap(), 0.0);
    assert_eq!(pixel_f1(&good, &mask, 0.5).unwrap(), 1.0);
    assert_eq!(pixel_f1(&bad, &mask, 0.5).unwrap(), 0.0);
}

proptest! {
    #[test]
    fn metrics_stay_in_unit_interval(seed in 0u64..100_000, t in 0.01f64..0.99) {
        let (map, mask, _, _) = instance(seed, 5, 5);
        let f1 = pixel_f1(&map, &mask, t).unwrap();
        let auc = pixel_auc(&map, &mask).unwrap();
        prop_assert!((0.0..=1.0).contains(&f1));
        prop_assert!((0.0..=1.0).contains(&auc));
    }

    #[test]
    fn auc_is_invariant_to_monotone_rescaling(seed in 0u64..100_000) {
        let (map, mask, scores, _) = instance(seed, 5, 6);
        let squashed = PixelProbMap::new(5, 6, scores.iter().map(|s| s * s * 0.5 + 0.1).collect()).unwrap();
        prop_assert!((pixel_auc(&map, &mask).unwrap() - pixel_auc(&squashed, &mask).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn complementing_scores_mirrors_auc(seed in 0u64..100_000) {
        let (map, mask, scores, _) = instance(seed, 4, 6);
        let flipped = PixelProbMap::new(4, 6, scores.iter().map(|s| 1.0 - s).collect()).unwrap();
        prop_assert!((pixel_auc(&map, &mask).unwrap() + pixel_auc(&flipped, &mask).unwrap() - 1.0).abs() < 1e-12);
    }
}
