//! On-disk dataset layout: `images/<id>.png`, `masks/<id>.png` and a
//! `manifest.jsonl` with one record per sample.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{generate_sample, DataGenConfig, ForgeryKind};
use crate::error::IoContext;
use crate::types::{ForgeryMask, ImagePatch};
use crate::{Error, Result};

pub const MANIFEST: &str = "manifest.jsonl";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidArgument(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub kind: ForgeryKind,
    pub seed: u64,
    pub split: Split,
}

/// Sample sizes per split; seeds are laid out as consecutive ranges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed_offset: u64,
}

impl SplitPlan {
    pub fn ranges(&self) -> Vec<(Split, Range<u64>)> {
        let mut start = self.seed_offset;
        [(Split::Train, self.train), (Split::Val, self.val), (Split::Test, self.test)]
            .into_iter()
            .map(|(s, n)| {
                let r = start..start + n as u64;
                start = r.end;
                (s, r)
            })
            .collect()
    }
}

/// Fails if any two split ranges share a seed.
pub fn check_disjoint(ranges: &[(Split, Range<u64>)]) -> Result<()> {
    for (i, (sa, a)) in ranges.iter().enumerate() {
        for (sb, b) in &ranges[i + 1..] {
            if a.start < b.end && b.start < a.end && !a.is_empty() && !b.is_empty() {
                return Err(Error::Dataset(format!(
                    "{} seeds {a:?} overlap {} seeds {b:?}",
                    sa.as_str(),
                    sb.as_str()
                )));
            }
        }
    }
    Ok(())
}

/// Fails if any id appears in more than one split.
pub fn check_split_ids(records: &[ManifestRecord]) -> Result<()> {
    let mut seen = std::collections::HashMap::new();
    for r in records {
        if let Some(prev) = seen.insert(r.id.as_str(), r.split) {
            if prev != r.split {
                return Err(Error::Dataset(format!(
                    "id {} listed in both {} and {}",
                    r.id,
                    prev.as_str(),
                    r.split.as_str()
                )));
            }
            return Err(Error::Dataset(format!("duplicate id {}", r.id)));
        }
    }
    Ok(())
}

pub fn sample_id(split: Split, seed: u64) -> String {
    format!("{}_{seed:07}", split.as_str())
}

/// Image and ground truth held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub id: String,
    pub image: ImagePatch,
    pub mask: ForgeryMask,
}

/// Generates the samples of one split without touching the disk.
pub fn generate_split(cfg: &DataGenConfig, split: Split, seeds: Range<u64>) -> Result<Vec<LabeledImage>> {
    seeds
        .map(|seed| {
            let s = generate_sample(seed, cfg)?;
            Ok(LabeledImage {
                id: sample_id(split, seed),
                image: s.image,
                mask: s.mask,
            })
        })
        .collect()
}

fn image_path(root: &Path, id: &str) -> PathBuf {
    root.join("images").join(format!("{id}.png"))
}

fn mask_path(root: &Path, id: &str) -> PathBuf {
    root.join("masks").join(format!("{id}.png"))
}

/// Generates every split of `plan` under `root` and writes the manifest.
pub fn write_dataset(root: &Path, cfg: &DataGenConfig, plan: &SplitPlan) -> Result<Vec<ManifestRecord>> {
    cfg.validate()?;
    let ranges = plan.ranges();
    check_disjoint(&ranges)?;
    for dir in ["images", "masks"] {
        fs::create_dir_all(root.join(dir)).at(root.join(dir))?;
    }
    let mut records = Vec::new();
    for (split, seeds) in ranges {
        for seed in seeds {
            let s = generate_sample(seed, cfg)?;
            let id = sample_id(split, seed);
            save_rgb(&image_path(root, &id), &s.image)?;
            let mp = mask_path(root, &id);
            s.mask.to_luma8().save(&mp)?;
            records.push(ManifestRecord {
                id,
                kind: s.meta.kind,
                seed,
                split,
            });
        }
    }
    write_manifest(root, &records)?;
    log::info!("wrote {} samples to {}", records.len(), root.display());
    Ok(records)
}

fn save_rgb(path: &Path, img: &ImagePatch) -> Result<()> {
    img.to_rgb8().save(path)?;
    Ok(())
}

pub fn write_manifest(root: &Path, records: &[ManifestRecord]) -> Result<()> {
    let path = root.join(MANIFEST);
    let mut w = BufWriter::new(fs::File::create(&path).at(&path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").at(&path)?;
    }
    w.flush().at(&path)
}

/// Reads the manifest, or lists `images/` when there is none; unlisted
/// directories are treated as a single test split of external images.
pub fn read_manifest(root: &Path) -> Result<Vec<ManifestRecord>> {
    let path = root.join(MANIFEST);
    let records = if path.exists() {
        let f = fs::File::open(&path).at(&path)?;
        let mut out = Vec::new();
        for (n, line) in BufReader::new(f).lines().enumerate() {
            let line = line.at(&path)?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(|e| {
                Error::Dataset(format!("{}:{}: {e}", path.display(), n + 1))
            })?);
        }
        out
    } else {
        let dir = root.join("images");
        let mut ids: Vec<String> = fs::read_dir(&dir)
            .at(&dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let p = e.path();
                (p.extension()? == "png").then(|| p.file_stem()?.to_str().map(str::to_owned))?
            })
            .collect();
        ids.sort();
        ids.into_iter()
            .map(|id| ManifestRecord {
                id,
                kind: ForgeryKind::External,
                seed: 0,
                split: Split::Test,
            })
            .collect()
    };
    check_split_ids(&records)?;
    Ok(records)
}

/// Loads the images and masks of one split in manifest order.
pub fn load_split(root: &Path, split: Split) -> Result<Vec<LabeledImage>> {
    let records = read_manifest(root)?;
    let mut out = Vec::new();
    for r in records.into_iter().filter(|r| r.split == split) {
        let ip = image_path(root, &r.id);
        let mp = mask_path(root, &r.id);
        if !mp.exists() {
            return Err(Error::Dataset(format!("missing mask {}", mp.display())));
        }
        let image = ImagePatch::from_rgb8(&image::open(&ip)?.to_rgb8());
        let mask = ForgeryMask::from_luma8(&image::open(&mp)?.to_luma8());
        if (mask.height(), mask.width()) != (image.height(), image.width()) {
            return Err(Error::Dataset(format!(
                "{}: mask {}x{} does not match image {}x{}",
                r.id,
                mask.height(),
                mask.width(),
                image.height(),
                image.width()
            )));
        }
        out.push(LabeledImage { id: r.id, image, mask });
    }
    Ok(out)
}
