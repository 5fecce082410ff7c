//! Independent references for the pixel metrics.

use forgeloc::{ForgeryMask, PixelProbMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Pairwise AUC: fraction of (positive, negative) pairs ranked correctly,
/// ties counted as half.
pub fn auc_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                wins += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

pub fn f1_oracle(scores: &[f64], labels: &[bool], threshold: f64) -> f64 {
    let pred: Vec<bool> = scores.iter().map(|&s| s > threshold).collect();
    let tp = pred.iter().zip(labels).filter(|(p, l)| **p && **l).count() as f64;
    let predicted = pred.iter().filter(|p| **p).count() as f64;
    let actual = labels.iter().filter(|l| **l).count() as f64;
    if predicted + actual == 0.0 {
        1.0
    } else {
        2.0 * tp / (predicted + actual)
    }
}

/// Random instance with coarse scores so that ties are common.
pub fn instance(seed: u64, h: usize, w: usize) -> (PixelProbMap, ForgeryMask, Vec<f64>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = h * w;
    let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
    labels[0] = true;
    labels[1] = false;
    let scores: Vec<f64> = labels
        .iter()
        .map(|&l| {
            let level: u32 = rng.random_range(0..=10);
            let level = if l { (level + 2).min(10) } else { level };
            level as f64 / 10.0
        })
        .collect();
    let map = PixelProbMap::new(h, w, scores.clone()).unwrap();
    let mask = ForgeryMask::new(h, w, labels.iter().map(|&l| l as u8).collect()).unwrap();
    (map, mask, scores, labels)
}
