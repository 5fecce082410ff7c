use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::TrainConfig;
use crate::error::IoContext;
use crate::Result;

pub const CONFIG_SNAPSHOT: &str = "config.snapshot";
pub const TRAIN_LOG: &str = "train.log.jsonl";
pub const SUMMARY: &str = "summary.json";

/// Output directory of one command invocation.
#[derive(Clone, Debug)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Creates `<base>/<timestamp>`, adding a numeric suffix if that exists.
    pub fn create(base: &Path) -> Result<Self> {
        let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S").to_string();
        fs::create_dir_all(base).at(base)?;
        let mut n = 0;
        loop {
            let name = if n == 0 { stamp.clone() } else { format!("{stamp}-{n}") };
            let root = base.join(name);
            match fs::create_dir(&root) {
                Ok(()) => return Ok(Self { root }),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => n += 1,
                Err(e) => return Err(e).at(root),
            }
        }
    }

    /// Uses `root` as is, creating it if needed.
    pub fn at(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).at(&root)?;
        Ok(Self { root })
    }

    pub fn child(&self, name: &str) -> Result<Self> {
        Self::at(self.root.join(name))
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn join(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_config(&self, cfg: &TrainConfig) -> Result<()> {
        let p = self.join(CONFIG_SNAPSHOT);
        fs::write(&p, cfg.to_text()).at(p)
    }

    pub fn checkpoint_path(&self, epoch: u64) -> PathBuf {
        self.join(&format!("checkpoint-epoch{epoch:03}.json"))
    }

    pub fn final_checkpoint_path(&self) -> PathBuf {
        self.join("checkpoint-final.json")
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let p = self.join(name);
        fs::write(&p, serde_json::to_string_pretty(value)?).at(p)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<()> {
        let p = self.join(name);
        fs::write(&p, text).at(p)
    }
}

/// Appends one JSON object per line.
pub struct JsonlWriter {
    path: PathBuf,
    w: BufWriter<fs::File>,
}

impl JsonlWriter {
    pub fn create(path: PathBuf) -> Result<Self> {
        let f = fs::OpenOptions::new().create(true).append(true).open(&path).at(&path)?;
        Ok(Self {
            w: BufWriter::new(f),
            path,
        })
    }

    pub fn write<T: Serialize>(&mut self, value: &T) -> Result<()> {
        serde_json::to_writer(&mut self.w, value)?;
        self.w.write_all(b"\n").at(&self.path)
    }

    pub fn flush(&mut self) -> Result<()> {
        self.w.flush().at(&self.path)
    }
}
