//! Procedural forgery generator and the distortion pipeline.
//!
//! Every image carries a faint period-2 luminance pattern on top of its
//! content. Hosts use phase `(0, 0)`; donors and shifted copies land on a
//! different phase, which leaves a local inconsistency to localize.

use image::ImageFormat;
use jpeg_encoder::{ColorType, Encoder, SamplingFactor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::types::{ForgeryMask, ImagePatch};
use crate::{Error, Result};

pub const MIN_SIDE: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataGenConfig {
    pub height: usize,
    pub width: usize,
    pub min_frac: f64,
    pub max_frac: f64,
    /// Probability that a sample is a splice rather than a copy-move.
    pub splice_prob: f64,
    /// Amplitude of the period-2 luminance pattern.
    pub trace_amplitude: f64,
    pub max_retries: usize,
}

impl Default for DataGenConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            min_frac: 0.02,
            max_frac: 0.4,
            splice_prob: 0.5,
            trace_amplitude: 0.045,
            max_retries: 64,
        }
    }
}

impl DataGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < MIN_SIDE || self.width < MIN_SIDE {
            return Err(Error::Config(format!(
                "image size {}x{} below the {MIN_SIDE}x{MIN_SIDE} minimum",
                self.height, self.width
            )));
        }
        if !(0.0 < self.min_frac && self.min_frac < self.max_frac && self.max_frac <= 1.0) {
            return Err(Error::Config(format!(
                "tampered fraction bounds [{}, {}] must satisfy 0 < min < max ≤ 1",
                self.min_frac, self.max_frac
            )));
        }
        if !(0.0..=1.0).contains(&self.splice_prob) {
            return Err(Error::Config(format!("splice_prob {} outside [0, 1]", self.splice_prob)));
        }
        if !(0.0..=0.06).contains(&self.trace_amplitude) {
            return Err(Error::Config(format!("trace_amplitude {} outside [0, 0.06]", self.trace_amplitude)));
        }
        if self.max_retries == 0 {
            return Err(Error::Config("max_retries must be positive".into()));
        }
        Ok(())
    }

    pub fn with_size(&self, h: usize, w: usize) -> Self {
        Self {
            height: h,
            width: w,
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForgeryKind {
    Splice,
    CopyMove,
    /// Sample loaded from a directory without generator metadata.
    External,
}

impl ForgeryKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Splice => "splice",
            Self::CopyMove => "copy_move",
            Self::External => "external",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub kind: ForgeryKind,
    pub seed: u64,
    /// Seed of the host image passed to [`generate_base_image`].
    pub host_seed: u64,
    pub donor_seed: Option<u64>,
    /// Pattern phase of the donor image.
    pub donor_phase: Option<(usize, usize)>,
    /// Copy-move displacement `(dy, dx)` from source to destination.
    pub offset: Option<(i64, i64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForgerySample {
    pub image: ImagePatch,
    pub mask: ForgeryMask,
    pub meta: SampleMeta,
}

fn check_size(h: usize, w: usize) -> Result<()> {
    if h < MIN_SIDE || w < MIN_SIDE {
        return Err(Error::InvalidArgument(format!(
            "image size {h}x{w} below the {MIN_SIDE}x{MIN_SIDE} minimum"
        )));
    }
    Ok(())
}

fn snap(v: f64) -> f32 {
    ((v.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32
}

/// Gray level with a small per-channel tint, like most natural surfaces.
fn muted_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let level: f64 = rng.random_range(0.1..0.9);
    std::array::from_fn(|_| level + rng.random_range(-0.1..0.1))
}

/// Content plus the luminance pattern at phase `(py, px)`, snapped to the
/// 8-bit grid so that images survive a PNG round trip unchanged.
fn render(seed: u64, h: usize, w: usize, phase: (usize, usize), amplitude: f64) -> ImagePatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = h * w;
    let mut planes = vec![vec![0.0f64; n]; 3];

    let c0 = muted_color(&mut rng);
    let c1 = muted_color(&mut rng);
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (dy, dx) = angle.sin_cos();
    let span = h as f64 * dy.abs() + w as f64 * dx.abs();
    for y in 0..h {
        for x in 0..w {
            let proj = (y as f64 - h as f64 / 2.0) * dy + (x as f64 - w as f64 / 2.0) * dx;
            let t = (proj / span.max(1.0) + 0.5).clamp(0.0, 1.0);
            for c in 0..3 {
                planes[c][y * w + x] = c0[c] * (1.0 - t) + c1[c] * t;
            }
        }
    }

    let shapes = rng.random_range(3..=7);
    for _ in 0..shapes {
        let color = muted_color(&mut rng);
        let alpha: f64 = rng.random_range(0.5..1.0);
        let (cy, cx) = (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64));
        let (ry, rx) = (
            rng.random_range(0.08..0.3) * h as f64,
            rng.random_range(0.08..0.3) * w as f64,
        );
        let rect = rng.random_bool(0.5);
        for y in 0..h {
            for x in 0..w {
                let (u, v) = ((y as f64 + 0.5 - cy) / ry, (x as f64 + 0.5 - cx) / rx);
                let inside = if rect { u.abs() <= 1.0 && v.abs() <= 1.0 } else { u * u + v * v <= 1.0 };
                if inside {
                    for c in 0..3 {
                        let p = &mut planes[c][y * w + x];
                        *p = (1.0 - alpha) * *p + alpha * color[c];
                    }
                }
            }
        }
    }

    let amp: f64 = rng.random_range(0.02..0.07);
    let tint = muted_color(&mut rng).map(|v| 0.5 + v);
    let (fy, fx) = (rng.random_range(0.05..0.45), rng.random_range(0.05..0.45));
    let ph: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    for (plane, t) in planes.iter_mut().zip(tint) {
        for y in 0..h {
            for x in 0..w {
                plane[y * w + x] += t * amp * (fy * y as f64 + fx * x as f64 + ph).sin();
            }
        }
    }

    let noise = Normal::new(0.0, 0.012).expect("valid σ");
    let pattern = [[1.0, -1.0], [0.0, 0.0]];
    let mut data = Vec::with_capacity(3 * n);
    let lum: Vec<f64> = (0..n).map(|_| noise.sample(&mut rng)).collect();
    for plane in &planes {
        for y in 0..h {
            for x in 0..w {
                let base = (plane[y * w + x] + lum[y * w + x]).clamp(0.06, 0.94);
                let trace = amplitude * pattern[(y + phase.0) % 2][(x + phase.1) % 2];
                data.push(snap(base + trace));
            }
        }
    }
    ImagePatch::from_planar(h, w, data).expect("planar layout")
}

/// Procedural host image; a pure function of `(seed, h, w)`.
pub fn generate_base_image(seed: u64, h: usize, w: usize) -> Result<ImagePatch> {
    check_size(h, w)?;
    Ok(render(seed, h, w, (0, 0), DataGenConfig::default().trace_amplitude))
}

fn base_image(seed: u64, cfg: &DataGenConfig) -> ImagePatch {
    render(seed, cfg.height, cfg.width, (0, 0), cfg.trace_amplitude)
}

/// Region drawn in a local frame, as the list of covered offsets.
struct Region {
    cells: Vec<(usize, usize)>,
    rows: usize,
    cols: usize,
}

/// Random ellipse or star polygon with area close to `target` pixels.
fn random_region(rng: &mut ChaCha8Rng, target: f64) -> Region {
    let star = rng.random_bool(0.5);
    let mut poly: Vec<(f64, f64)> = Vec::new();
    let (mut ry, mut rx) = (1.0, 1.0);
    if star {
        let k = rng.random_range(5..=8);
        let inner: f64 = rng.random_range(0.45..0.8);
        let rot: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        for i in 0..2 * k {
            let r = if i % 2 == 0 { 1.0 } else { inner } * rng.random_range(0.9..1.1);
            let a = rot + std::f64::consts::PI * i as f64 / k as f64;
            poly.push((r * a.sin(), r * a.cos()));
        }
        let unit_area = 0.5
            * (0..poly.len())
                .map(|i| {
                    let (y0, x0) = poly[i];
                    let (y1, x1) = poly[(i + 1) % poly.len()];
                    x0 * y1 - x1 * y0
                })
                .sum::<f64>()
                .abs();
        let s = (target / unit_area).sqrt();
        poly.iter_mut().for_each(|p| *p = (p.0 * s, p.1 * s));
    } else {
        let aspect: f64 = rng.random_range(0.5..2.0);
        ry = (target * aspect / std::f64::consts::PI).sqrt();
        rx = ry / aspect;
    }
    let (ey, ex) = if star {
        (
            poly.iter().map(|p| p.0.abs()).fold(0.0, f64::max),
            poly.iter().map(|p| p.1.abs()).fold(0.0, f64::max),
        )
    } else {
        (ry, rx)
    };
    let rows = (2.0 * ey).ceil() as usize + 1;
    let cols = (2.0 * ex).ceil() as usize + 1;
    let (oy, ox) = (rows as f64 / 2.0, cols as f64 / 2.0);
    let mut cells = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let (y, x) = (r as f64 + 0.5 - oy, c as f64 + 0.5 - ox);
            let inside = if star {
                point_in_polygon(y, x, &poly)
            } else {
                (y / ry).powi(2) + (x / rx).powi(2) <= 1.0
            };
            if inside {
                cells.push((r, c));
            }
        }
    }
    Region { cells, rows, cols }
}

fn point_in_polygon(y: f64, x: f64, poly: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (yi, xi) = poly[i];
        let (yj, xj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn fraction_ok(count: usize, cfg: &DataGenConfig, max: f64) -> bool {
    let f = count as f64 / (cfg.height * cfg.width) as f64;
    f >= cfg.min_frac && f <= max
}

fn nonzero_phase(rng: &mut ChaCha8Rng) -> (usize, usize) {
    [(0, 1), (1, 0), (1, 1)][rng.random_range(0..3)]
}

/// Pastes a region of a donor image, rendered on a shifted pattern phase,
/// into the host at the same location.
pub fn generate_splice(seed: u64, h: usize, w: usize) -> Result<ForgerySample> {
    check_size(h, w)?;
    splice_with(seed, &DataGenConfig::default().with_size(h, w))
}

fn splice_with(seed: u64, cfg: &DataGenConfig) -> Result<ForgerySample> {
    let (h, w) = (cfg.height, cfg.width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5b1c_e000);
    let host_seed: u64 = rng.random();
    let donor_seed: u64 = rng.random();
    let host = base_image(host_seed, cfg);
    let donor_phase = nonzero_phase(&mut rng);
    let donor = render(donor_seed, h, w, donor_phase, cfg.trace_amplitude);
    for _ in 0..cfg.max_retries {
        let target = rng.random_range(cfg.min_frac..cfg.max_frac) * (h * w) as f64;
        let region = random_region(&mut rng, target);
        let cy = rng.random_range(0..h) as i64 - region.rows as i64 / 2;
        let cx = rng.random_range(0..w) as i64 - region.cols as i64 / 2;
        let mut mask = ForgeryMask::zeros(h, w);
        for &(r, c) in &region.cells {
            let (y, x) = (cy + r as i64, cx + c as i64);
            if (0..h as i64).contains(&y) && (0..w as i64).contains(&x) {
                mask.set(y as usize, x as usize, true);
            }
        }
        if !fraction_ok(mask.count(), cfg, cfg.max_frac) {
            continue;
        }
        let mut image = host.clone();
        for y in 0..h {
            for x in 0..w {
                if mask.get(y, x) {
                    for c in 0..3 {
                        image.set(c, y, x, donor.get(c, y, x));
                    }
                }
            }
        }
        return Ok(ForgerySample {
            image,
            mask,
            meta: SampleMeta {
                kind: ForgeryKind::Splice,
                seed,
                host_seed,
                donor_seed: Some(donor_seed),
                donor_phase: Some(donor_phase),
                offset: None,
            },
        });
    }
    Err(Error::Generation(format!(
        "splice seed {seed}: no region within the fraction bounds after {} tries",
        cfg.max_retries
    )))
}

/// Copies a region of the host onto a disjoint location. The displacement
/// is never even in both axes, so the copy lands on a shifted pattern phase.
pub fn generate_copy_move(seed: u64, h: usize, w: usize) -> Result<ForgerySample> {
    check_size(h, w)?;
    copy_move_with(seed, &DataGenConfig::default().with_size(h, w))
}

fn copy_move_with(seed: u64, cfg: &DataGenConfig) -> Result<ForgerySample> {
    let (h, w) = (cfg.height, cfg.width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc09e_0000);
    let host_seed: u64 = rng.random();
    let host = base_image(host_seed, cfg);
    // Source and destination share the image, so each gets half the budget.
    let max = (cfg.max_frac / 2.0).max(cfg.min_frac * 1.5).min(cfg.max_frac);
    for _ in 0..cfg.max_retries {
        let target = rng.random_range(cfg.min_frac..max) * (h * w) as f64;
        let region = random_region(&mut rng, target);
        if region.rows > h || region.cols > w || !fraction_ok(region.cells.len(), cfg, max) {
            continue;
        }
        let (sy, sx) = (rng.random_range(0..=h - region.rows), rng.random_range(0..=w - region.cols));
        let (ty, tx) = (rng.random_range(0..=h - region.rows), rng.random_range(0..=w - region.cols));
        let (dy, dx) = (ty as i64 - sy as i64, tx as i64 - sx as i64);
        if dy % 2 == 0 && dx % 2 == 0 {
            continue;
        }
        let mut src = ForgeryMask::zeros(h, w);
        let mut mask = ForgeryMask::zeros(h, w);
        for &(r, c) in &region.cells {
            src.set(sy + r, sx + c, true);
            mask.set(ty + r, tx + c, true);
        }
        if src.data().iter().zip(mask.data()).any(|(a, b)| a & b == 1) {
            continue;
        }
        let mut image = host.clone();
        for &(r, c) in &region.cells {
            for ch in 0..3 {
                image.set(ch, ty + r, tx + c, host.get(ch, sy + r, sx + c));
            }
        }
        return Ok(ForgerySample {
            image,
            mask,
            meta: SampleMeta {
                kind: ForgeryKind::CopyMove,
                seed,
                host_seed,
                donor_seed: None,
                donor_phase: None,
                offset: Some((dy, dx)),
            },
        });
    }
    Err(Error::Generation(format!(
        "copy-move seed {seed}: no disjoint placement after {} tries",
        cfg.max_retries
    )))
}

/// One sample whose kind is drawn from the seed.
pub fn generate_sample(seed: u64, cfg: &DataGenConfig) -> Result<ForgerySample> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if rng.random_bool(cfg.splice_prob) {
        splice_with(seed, cfg)
    } else {
        copy_move_with(seed, cfg)
    }
}

/// Regenerates the host image named in a sample's metadata.
pub fn host_image(meta: &SampleMeta, cfg: &DataGenConfig) -> ImagePatch {
    base_image(meta.host_seed, cfg)
}

/// Regenerates a splice donor image, if the sample has one.
pub fn donor_image(meta: &SampleMeta, cfg: &DataGenConfig) -> Option<ImagePatch> {
    let (seed, phase) = (meta.donor_seed?, meta.donor_phase?);
    Some(render(seed, cfg.height, cfg.width, phase, cfg.trace_amplitude))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistortionSpec {
    Jpeg { quality: u8 },
    GaussianBlur { kernel: usize, sigma: f64 },
}

impl DistortionSpec {
    pub fn jpeg(quality: u8) -> Result<Self> {
        let d = Self::Jpeg { quality };
        d.validate()?;
        Ok(d)
    }

    /// Blur with the sigma OpenCV derives from the kernel size.
    pub fn blur(kernel: usize) -> Result<Self> {
        let d = Self::GaussianBlur {
            kernel,
            sigma: default_sigma(kernel),
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Jpeg { quality } if !(1..=100).contains(&quality) => {
                Err(Error::InvalidArgument(format!("JPEG quality {quality} outside 1..=100")))
            }
            Self::GaussianBlur { kernel, .. } if kernel < 3 || kernel % 2 == 0 => {
                Err(Error::InvalidArgument(format!("blur kernel {kernel} must be odd and ≥ 3")))
            }
            Self::GaussianBlur { sigma, .. } if !(sigma > 0.0 && sigma.is_finite()) => {
                Err(Error::InvalidArgument(format!("blur sigma {sigma} must be positive")))
            }
            _ => Ok(()),
        }
    }

    pub fn apply(&self, img: &ImagePatch) -> Result<ImagePatch> {
        self.validate()?;
        match *self {
            Self::Jpeg { quality } => apply_jpeg(img, quality),
            Self::GaussianBlur { kernel, sigma } => apply_gaussian_blur(img, kernel, sigma),
        }
    }

    /// Short label such as `jpeg90` or `blur5`.
    pub fn label(&self) -> String {
        match *self {
            Self::Jpeg { quality } => format!("jpeg{quality}"),
            Self::GaussianBlur { kernel, .. } => format!("blur{kernel}"),
        }
    }
}

pub fn default_sigma(kernel: usize) -> f64 {
    0.3 * ((kernel as f64 - 1.0) * 0.5 - 1.0) + 0.8
}

/// Baseline JPEG encode/decode round trip with 4:2:0 chroma subsampling.
pub fn apply_jpeg(img: &ImagePatch, quality: u8) -> Result<ImagePatch> {
    if !(1..=100).contains(&quality) {
        return Err(Error::InvalidArgument(format!("JPEG quality {quality} outside 1..=100")));
    }
    let (h, w) = (img.height(), img.width());
    let dims = (u16::try_from(w), u16::try_from(h));
    let (Ok(w16), Ok(h16)) = dims else {
        return Err(Error::Codec(format!("{h}x{w} exceeds JPEG dimensions")));
    };
    let rgb = img.to_rgb8();
    let mut buf = Vec::new();
    let mut enc = Encoder::new(&mut buf, quality);
    enc.set_sampling_factor(SamplingFactor::R_4_2_0);
    enc.encode(rgb.as_raw(), w16, h16, ColorType::Rgb)
        .map_err(|e| Error::Codec(e.to_string()))?;
    let decoded = image::load_from_memory_with_format(&buf, ImageFormat::Jpeg)
        .map_err(|e| Error::Codec(e.to_string()))?
        .to_rgb8();
    if decoded.dimensions() != (w as u32, h as u32) {
        return Err(Error::Codec(format!(
            "decoder returned {:?} for a {w}x{h} image",
            decoded.dimensions()
        )));
    }
    Ok(ImagePatch::from_rgb8(&decoded))
}

/// Normalized 1D Gaussian taps.
pub fn gaussian_kernel(kernel: usize, sigma: f64) -> Result<Vec<f64>> {
    DistortionSpec::GaussianBlur { kernel, sigma }.validate()?;
    let r = (kernel / 2) as f64;
    let taps: Vec<f64> = (0..kernel)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = taps.iter().sum();
    Ok(taps.into_iter().map(|t| t / s).collect())
}

/// Mirror index without repeating the edge sample (`dcb|abcd|cba`).
fn reflect101(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = i.rem_euclid(period);
    (if m < n as i64 { m } else { period - m }) as usize
}

/// Separable Gaussian blur with mirrored borders.
pub fn apply_gaussian_blur(img: &ImagePatch, kernel: usize, sigma: f64) -> Result<ImagePatch> {
    let taps = gaussian_kernel(kernel, sigma)?;
    let (h, w) = (img.height(), img.width());
    let r = (kernel / 2) as i64;
    let mut out = img.clone();
    let mut tmp = vec![0.0f64; h * w];
    for c in 0..3 {
        let plane = img.plane(c);
        for y in 0..h {
            for x in 0..w {
                tmp[y * w + x] = taps
                    .iter()
                    .enumerate()
                    .map(|(k, t)| t * plane[y * w + reflect101(x as i64 + k as i64 - r, w)] as f64)
                    .sum();
            }
        }
        for y in 0..h {
            for x in 0..w {
                let v: f64 = taps
                    .iter()
                    .enumerate()
                    .map(|(k, t)| t * tmp[reflect101(y as i64 + k as i64 - r, h) * w + x])
                    .sum();
                out.set(c, y, x, v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    Ok(out)
}

/// Applies an optional distortion.
pub fn distort(img: &ImagePatch, spec: Option<&DistortionSpec>) -> Result<ImagePatch> {
    match spec {
        Some(d) => d.apply(img),
        None => Ok(img.clone()),
    }
}
