use std::fmt::Write as _;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::eval::predict;
use crate::datagen::DistortionSpec;
use crate::dataset::LabeledImage;
use crate::metrics::{score_images, Aggregation};
use crate::params::ParamStore;
use crate::{ForgeryModel, ImagePatch, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessPoint {
    /// `None` for the undistorted baseline.
    pub distortion: Option<DistortionSpec>,
    pub label: String,
    pub auc: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessCurve {
    pub family: String,
    /// Baseline first, then the requested levels in order.
    pub points: Vec<RobustnessPoint>,
}

impl RobustnessCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("family,level,auc,f1\n");
        for p in &self.points {
            let _ = writeln!(s, "{},{},{:.6},{:.6}", self.family, p.label, p.auc, p.f1);
        }
        s
    }

    /// Largest rise in AUC from one level to the next; a degrading curve
    /// gives a value ≤ 0.
    pub fn max_increase(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| w[1].auc - w[0].auc)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Line plot of AUC per level on a white canvas, y from 0.5 to 1.
    pub fn render(&self) -> RgbImage {
        let (w, h, margin) = (320u32, 200u32, 20i64);
        let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
        let (x0, x1, y0, y1) = (margin, w as i64 - margin, h as i64 - margin, margin);
        let axis = Rgb([0, 0, 0]);
        draw_line(&mut img, (x0, y0), (x1, y0), axis);
        draw_line(&mut img, (x0, y0), (x0, y1), axis);
        for q in [0.6, 0.7, 0.8, 0.9, 1.0] {
            let y = y0 + ((q - 0.5) / 0.5 * (y1 - y0) as f64).round() as i64;
            draw_line(&mut img, (x0, y), (x1, y), Rgb([220, 220, 220]));
        }
        let n = self.points.len().max(2) - 1;
        let pts: Vec<(i64, i64)> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let x = x0 + (i as f64 / n as f64 * (x1 - x0) as f64).round() as i64;
                let a = if p.auc.is_finite() { p.auc.clamp(0.5, 1.0) } else { 0.5 };
                let y = y0 + ((a - 0.5) / 0.5 * (y1 - y0) as f64).round() as i64;
                (x, y)
            })
            .collect();
        let line = Rgb([200, 40, 40]);
        for seg in pts.windows(2) {
            draw_line(&mut img, seg[0], seg[1], line);
        }
        for &(x, y) in &pts {
            for dy in -2..=2 {
                for dx in -2..=2 {
                    put(&mut img, x + dx, y + dy, line);
                }
            }
        }
        img
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

/// Bresenham.
fn draw_line(img: &mut RgbImage, (mut x, mut y): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let (dx, dy) = ((x1 - x).abs(), -(y1 - y).abs());
    let (sx, sy) = ((x1 - x).signum(), (y1 - y).signum());
    let mut err = dx + dy;
    loop {
        put(img, x, y, c);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn score_level(
    model: &ForgeryModel,
    store: &ParamStore<f32>,
    data: &[LabeledImage],
    spec: Option<&DistortionSpec>,
    threshold: f64,
    aggregation: Aggregation,
    batch_size: usize,
) -> Result<RobustnessPoint> {
    let distorted: Vec<ImagePatch> = match spec {
        Some(s) => data.iter().map(|d| s.apply(&d.image)).collect::<Result<_>>()?,
        None => data.iter().map(|d| d.image.clone()).collect(),
    };
    let refs: Vec<&ImagePatch> = distorted.iter().collect();
    let maps = predict(model, store, &refs, batch_size)?;
    let items: Vec<_> = data
        .iter()
        .zip(maps)
        .map(|(d, m)| (d.id.clone(), m, d.mask.clone()))
        .collect();
    let report = score_images(&items, threshold, aggregation)?;
    Ok(RobustnessPoint {
        distortion: spec.cloned(),
        label: spec.map_or_else(|| "none".to_string(), DistortionSpec::label),
        auc: report.auc,
        f1: report.f1,
    })
}

/// Scores the test images under each JPEG quality and blur kernel. Masks are
/// left untouched. Both curves share the undistorted baseline.
#[allow(clippy::too_many_arguments)]
pub fn robustness(
    model: &ForgeryModel,
    store: &ParamStore<f32>,
    data: &[LabeledImage],
    jpeg_qualities: &[u8],
    blur_kernels: &[usize],
    threshold: f64,
    aggregation: Aggregation,
    batch_size: usize,
) -> Result<Vec<RobustnessCurve>> {
    let jpeg: Vec<_> = jpeg_qualities.iter().map(|&q| DistortionSpec::jpeg(q)).collect::<Result<_>>()?;
    let blur: Vec<_> = blur_kernels.iter().map(|&k| DistortionSpec::blur(k)).collect::<Result<_>>()?;
    let baseline = score_level(model, store, data, None, threshold, aggregation, batch_size)?;
    let mut curves = Vec::new();
    for (family, specs) in [("jpeg", jpeg), ("blur", blur)] {
        let mut points = vec![baseline.clone()];
        for s in &specs {
            points.push(score_level(model, store, data, Some(s), threshold, aggregation, batch_size)?);
        }
        curves.push(RobustnessCurve {
            family: family.to_string(),
            points,
        });
    }
    Ok(curves)
}
