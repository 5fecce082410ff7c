use serde::{Deserialize, Serialize};

use crate::types::{ForgeryMask, PixelProbMap};
use crate::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            // Nothing predicted and nothing tampered: full agreement.
            1.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }
}

fn check_shapes(pred: &PixelProbMap, gt: &ForgeryMask) -> Result<()> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(Error::Shape(format!(
            "prediction {}x{} vs mask {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    Ok(())
}

/// Counts with `p > threshold` taken as a positive prediction.
pub fn confusion(pred: &PixelProbMap, gt: &ForgeryMask, threshold: f64) -> Result<Confusion> {
    check_shapes(pred, gt)?;
    let mut c = Confusion::default();
    for (&p, &m) in pred.data().iter().zip(gt.data()) {
        match (p > threshold, m == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn pixel_f1(pred: &PixelProbMap, gt: &ForgeryMask, threshold: f64) -> Result<f64> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} outside (0, 1)")));
    }
    Ok(confusion(pred, gt, threshold)?.f1())
}

/// Mann–Whitney AUC over `(score, positive)` pairs using mid-ranks for ties.
pub fn auc_from_scores(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateMask);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their average.
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

pub fn pixel_auc(pred: &PixelProbMap, gt: &ForgeryMask) -> Result<f64> {
    check_shapes(pred, gt)?;
    let labels: Vec<bool> = gt.data().iter().map(|&m| m == 1).collect();
    auc_from_scores(pred.data(), &labels)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Mean of per-image scores.
    #[default]
    PerImage,
    /// One score over all pixels of all images.
    Pooled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub id: String,
    pub f1: f64,
    /// Absent when the mask has a single class.
    pub auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub f1: f64,
    pub auc: f64,
    pub threshold: f64,
    pub aggregation: Aggregation,
    pub images: usize,
    pub auc_skipped: usize,
    pub per_image: Vec<ImageScore>,
}

/// Scores `(id, prediction, mask)` triples.
pub fn score_images(
    items: &[(String, PixelProbMap, ForgeryMask)],
    threshold: f64,
    aggregation: Aggregation,
) -> Result<ScoreReport> {
    if items.is_empty() {
        return Err(Error::InvalidArgument("no images to score".into()));
    }
    let mut per_image = Vec::with_capacity(items.len());
    let mut pooled = Confusion::default();
    for (id, pred, gt) in items {
        let c = confusion(pred, gt, threshold)?;
        pooled.merge(&c);
        let auc = match pixel_auc(pred, gt) {
            Ok(a) => Some(a),
            Err(Error::DegenerateMask) => {
                log::warn!("{id}: mask has a single class, AUC skipped");
                None
            }
            Err(e) => return Err(e),
        };
        per_image.push(ImageScore {
            id: id.clone(),
            f1: c.f1(),
            auc,
        });
    }
    let aucs: Vec<f64> = per_image.iter().filter_map(|s| s.auc).collect();
    let auc_skipped = per_image.len() - aucs.len();
    let (f1, auc) = match aggregation {
        Aggregation::PerImage => (
            per_image.iter().map(|s| s.f1).sum::<f64>() / per_image.len() as f64,
            if aucs.is_empty() {
                f64::NAN
            } else {
                aucs.iter().sum::<f64>() / aucs.len() as f64
            },
        ),
        Aggregation::Pooled => {
            let scores: Vec<f64> = items.iter().flat_map(|(_, p, _)| p.data().iter().copied()).collect();
            let labels: Vec<bool> = items.iter().flat_map(|(_, _, m)| m.data().iter().map(|&v| v == 1)).collect();
            (pooled.f1(), auc_from_scores(&scores, &labels).unwrap_or(f64::NAN))
        }
    };
    Ok(ScoreReport {
        f1,
        auc,
        threshold,
        aggregation,
        images: items.len(),
        auc_skipped,
        per_image,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(v: &[f64]) -> PixelProbMap {
        PixelProbMap::new(1, v.len(), v.to_vec()).unwrap()
    }

    fn mask(v: &[u8]) -> ForgeryMask {
        ForgeryMask::new(1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn hand_computed_cases() {
        assert_eq!(pixel_auc(&map(&[0.9, 0.4, 0.6, 0.1]), &mask(&[1, 1, 0, 0])).unwrap(), 0.75);
        assert_eq!(pixel_auc(&map(&[0.3; 4]), &mask(&[1, 0, 0, 1])).unwrap(), 0.5);
        assert!(matches!(pixel_auc(&map(&[0.3; 4]), &mask(&[0; 4])), Err(Error::DegenerateMask)));
        assert_eq!(pixel_f1(&map(&[0.0; 4]), &mask(&[0; 4]), 0.5).unwrap(), 1.0);
        assert_eq!(pixel_f1(&map(&[0.0; 4]), &mask(&[1, 0, 0, 0]), 0.5).unwrap(), 0.0);
        assert!(pixel_f1(&map(&[0.0; 4]), &mask(&[0; 3]), 0.5).is_err());
        assert!(pixel_f1(&map(&[0.0; 4]), &mask(&[0; 4]), 1.0).is_err());
    }

    #[test]
    fn degenerate_images_are_skipped_in_the_mean() {
        let items = vec![
            ("a".to_string(), map(&[0.9, 0.1]), mask(&[1, 0])),
            ("b".to_string(), map(&[0.2, 0.1]), mask(&[0, 0])),
        ];
        let r = score_images(&items, 0.5, Aggregation::PerImage).unwrap();
        assert_eq!((r.f1, r.auc, r.auc_skipped), (1.0, 1.0, 1));
        let r = score_images(&items, 0.5, Aggregation::Pooled).unwrap();
        assert_eq!(r.f1, 1.0);
        assert_eq!(r.auc, 1.0);
    }
}
