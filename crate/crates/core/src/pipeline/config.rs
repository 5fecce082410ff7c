use std::fmt::Write as _;
use std::path::Path;

use forgeloc_tensor::optim::AdamWConfig;
use serde::{Deserialize, Serialize};

use crate::error::IoContext;
use crate::objectives::{Lambdas, MiKlMode, SuAggregate, DEFAULT_PROB_CLAMP_EPS};
use crate::reasoning::{NoiseRegion, ReasoningConfig, DEFAULT_MASK_NOISE_GAMMA};
use crate::{Error, ModelConfig, ObjectiveConfig, Result};

/// Everything a training run depends on. Stored as flat `key = value` text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub image_size: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stops early after this many optimizer steps; 0 means no limit.
    pub max_steps: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub lambda_su: f64,
    pub lambda_mi: f64,
    pub lambda_aux: f64,
    pub mask_noise_gamma: f64,
    pub noise_region: NoiseRegion,
    pub mi_kl_mode: MiKlMode,
    pub su_aggregate: SuAggregate,
    pub detach_loo: bool,
    pub prob_clamp_eps: f64,
    pub backbone_depth: usize,
    pub backbone_blocks: usize,
    pub base_channels: usize,
    pub reasoning_depth: usize,
    pub reasoning_blocks: usize,
    /// Parameter initialisation.
    pub init_seed: u64,
    /// Epoch shuffling.
    pub shuffle_seed: u64,
    /// Per-step mask noise.
    pub noise_seed: u64,
    pub threshold: f64,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let objective = ObjectiveConfig::default();
        Self {
            image_size: 64,
            batch_size: 12,
            epochs: 20,
            max_steps: 0,
            lr: 5e-4,
            weight_decay: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            lambda_su: objective.lambdas.su,
            lambda_mi: objective.lambdas.mi,
            lambda_aux: objective.lambdas.aux,
            mask_noise_gamma: DEFAULT_MASK_NOISE_GAMMA,
            noise_region: NoiseRegion::WholeGrid,
            mi_kl_mode: objective.mi_kl_mode,
            su_aggregate: objective.su_aggregate,
            detach_loo: objective.detach_loo,
            prob_clamp_eps: DEFAULT_PROB_CLAMP_EPS,
            backbone_depth: model.backbone_depth,
            backbone_blocks: model.backbone_blocks,
            base_channels: model.base_channels,
            reasoning_depth: model.reasoning.depth,
            reasoning_blocks: model.reasoning.blocks_per_scale,
            init_seed: 0,
            shuffle_seed: 1,
            noise_seed: 2,
            threshold: 0.5,
            eval_batch_size: 16,
        }
    }
}

fn parse_num<V: std::str::FromStr>(key: &str, v: &str) -> Result<V>
where
    V::Err: std::fmt::Display,
{
    v.parse().map_err(|e| Error::Config(format!("{key} = {v:?}: {e}")))
}

fn parse_enum<V: for<'de> Deserialize<'de>>(key: &str, v: &str) -> Result<V> {
    serde_json::from_value(serde_json::Value::String(v.to_owned()))
        .map_err(|e| Error::Config(format!("{key} = {v:?}: {e}")))
}

fn enum_str<V: Serialize>(v: &V) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        other => panic!("unit enum expected, got {other:?}"),
    }
}

impl TrainConfig {
    /// Parses `key = value` lines on top of the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).at(path)?)
    }

    /// Applies a `key=value` override such as a command-line `--set`.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {kv:?}")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "image_size" => self.image_size = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "max_steps" => self.max_steps = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "weight_decay" => self.weight_decay = parse_num(key, v)?,
            "beta1" => self.beta1 = parse_num(key, v)?,
            "beta2" => self.beta2 = parse_num(key, v)?,
            "adam_eps" => self.adam_eps = parse_num(key, v)?,
            "lambda_su" => self.lambda_su = parse_num(key, v)?,
            "lambda_mi" => self.lambda_mi = parse_num(key, v)?,
            "lambda_aux" => self.lambda_aux = parse_num(key, v)?,
            "mask_noise_gamma" => self.mask_noise_gamma = parse_num(key, v)?,
            "noise_region" => self.noise_region = parse_enum(key, v)?,
            "mi_kl_mode" => self.mi_kl_mode = parse_enum(key, v)?,
            "su_aggregate" => self.su_aggregate = parse_enum(key, v)?,
            "detach_loo" => self.detach_loo = parse_num(key, v)?,
            "prob_clamp_eps" => self.prob_clamp_eps = parse_num(key, v)?,
            "backbone_depth" => self.backbone_depth = parse_num(key, v)?,
            "backbone_blocks" => self.backbone_blocks = parse_num(key, v)?,
            "base_channels" => self.base_channels = parse_num(key, v)?,
            "reasoning_depth" => self.reasoning_depth = parse_num(key, v)?,
            "reasoning_blocks" => self.reasoning_blocks = parse_num(key, v)?,
            "init_seed" => self.init_seed = parse_num(key, v)?,
            "shuffle_seed" => self.shuffle_seed = parse_num(key, v)?,
            "noise_seed" => self.noise_seed = parse_num(key, v)?,
            "threshold" => self.threshold = parse_num(key, v)?,
            "eval_batch_size" => self.eval_batch_size = parse_num(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Flat text form; `parse(to_text())` gives back the same config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("image_size", self.image_size.to_string());
        put("batch_size", self.batch_size.to_string());
        put("epochs", self.epochs.to_string());
        put("max_steps", self.max_steps.to_string());
        put("lr", format!("{:?}", self.lr));
        put("weight_decay", format!("{:?}", self.weight_decay));
        put("beta1", format!("{:?}", self.beta1));
        put("beta2", format!("{:?}", self.beta2));
        put("adam_eps", format!("{:?}", self.adam_eps));
        put("lambda_su", format!("{:?}", self.lambda_su));
        put("lambda_mi", format!("{:?}", self.lambda_mi));
        put("lambda_aux", format!("{:?}", self.lambda_aux));
        put("mask_noise_gamma", format!("{:?}", self.mask_noise_gamma));
        put("noise_region", enum_str(&self.noise_region));
        put("mi_kl_mode", enum_str(&self.mi_kl_mode));
        put("su_aggregate", enum_str(&self.su_aggregate));
        put("detach_loo", self.detach_loo.to_string());
        put("prob_clamp_eps", format!("{:?}", self.prob_clamp_eps));
        put("backbone_depth", self.backbone_depth.to_string());
        put("backbone_blocks", self.backbone_blocks.to_string());
        put("base_channels", self.base_channels.to_string());
        put("reasoning_depth", self.reasoning_depth.to_string());
        put("reasoning_blocks", self.reasoning_blocks.to_string());
        put("init_seed", self.init_seed.to_string());
        put("shuffle_seed", self.shuffle_seed.to_string());
        put("noise_seed", self.noise_seed.to_string());
        put("threshold", format!("{:?}", self.threshold));
        put("eval_batch_size", self.eval_batch_size.to_string());
        s
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_size", self.image_size),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("backbone_depth", self.backbone_depth),
            ("backbone_blocks", self.backbone_blocks),
            ("base_channels", self.base_channels),
            ("reasoning_blocks", self.reasoning_blocks),
            ("eval_batch_size", self.eval_batch_size),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        for (k, v) in [("lr", self.lr), ("adam_eps", self.adam_eps), ("prob_clamp_eps", self.prob_clamp_eps)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{k} must be positive, got {v}")));
            }
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight_decay must be ≥ 0, got {}", self.weight_decay)));
        }
        for (k, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{k} must lie in [0, 1), got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.mask_noise_gamma) {
            return Err(Error::Config(format!("mask_noise_gamma {} outside [0, 1]", self.mask_noise_gamma)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        if self.prob_clamp_eps >= 0.5 {
            return Err(Error::Config("prob_clamp_eps must be below 0.5".into()));
        }
        self.lambdas().validate()?;
        let unit = self.model().size_unit();
        if self.image_size % unit != 0 {
            return Err(Error::Config(format!(
                "image_size {} is not a multiple of {unit}",
                self.image_size
            )));
        }
        Ok(())
    }

    pub fn lambdas(&self) -> Lambdas {
        Lambdas {
            su: self.lambda_su,
            mi: self.lambda_mi,
            aux: self.lambda_aux,
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            backbone_depth: self.backbone_depth,
            backbone_blocks: self.backbone_blocks,
            base_channels: self.base_channels,
            reasoning: ReasoningConfig {
                depth: self.reasoning_depth,
                blocks_per_scale: self.reasoning_blocks,
            },
        }
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            lambdas: self.lambdas(),
            mi_kl_mode: self.mi_kl_mode,
            su_aggregate: self.su_aggregate,
            detach_loo: self.detach_loo,
            prob_clamp_eps: self.prob_clamp_eps,
        }
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn steps_per_epoch(&self, train_len: usize) -> u64 {
        train_len.div_ceil(self.batch_size) as u64
    }

    /// Length of the cosine schedule.
    pub fn total_steps(&self, train_len: usize) -> u64 {
        let full = self.steps_per_epoch(train_len) * self.epochs as u64;
        if self.max_steps > 0 {
            full.min(self.max_steps)
        } else {
            full
        }
    }
}
