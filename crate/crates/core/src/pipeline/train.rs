use std::time::Instant;

use forgeloc_tensor::optim::{cosine_lr, AdamW};
use forgeloc_tensor::{Graph, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CHECKPOINT_FORMAT};
use super::config::TrainConfig;
use super::run::{JsonlWriter, RunDir, TRAIN_LOG};
use crate::dataset::LabeledImage;
use crate::objectives::LossBundle;
use crate::params::ParamStore;
use crate::reasoning::{inject_mask_noise_in, next_noise_seed};
use crate::{Error, ForgeryModel, Result};

/// One line of `train.log.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: u64,
    pub step: u64,
    pub lr: f64,
    pub gamma: f64,
    #[serde(flatten)]
    pub losses: LossBundle,
}

/// Model, parameters, optimizer and RNG streams of a training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: ForgeryModel,
    pub store: ParamStore<f32>,
    pub optimizer: AdamW<f32>,
    /// Completed epochs.
    pub epoch: u64,
    pub step: u64,
    shuffle_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
}

/// Stacks images and masks into `N×3×H×W` and `N×1×H×W` tensors.
pub fn batch_tensors(batch: &[&LabeledImage]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let images: Vec<_> = batch.iter().map(|s| s.image.to_tensor()).collect();
    let masks: Vec<_> = batch.iter().map(|s| s.mask.to_tensor()).collect();
    Ok((Tensor::stack(&images)?, Tensor::stack(&masks)?))
}

fn check_sizes(cfg: &TrainConfig, data: &[LabeledImage]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Dataset("training split is empty".into()));
    }
    let s = cfg.image_size;
    if let Some(bad) = data.iter().find(|d| d.image.height() != s || d.image.width() != s) {
        return Err(Error::Dataset(format!(
            "{} is {}x{}, config expects {s}x{s}",
            bad.id,
            bad.image.height(),
            bad.image.width()
        )));
    }
    Ok(())
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let (model, store) = ForgeryModel::init::<f32>(config.model(), config.init_seed)?;
        let optimizer = AdamW::new(config.optimizer(), store.values());
        Ok(Self {
            shuffle_rng: ChaCha8Rng::seed_from_u64(config.shuffle_seed),
            noise_rng: ChaCha8Rng::seed_from_u64(config.noise_seed),
            config,
            model,
            store,
            optimizer,
            epoch: 0,
            step: 0,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.config.validate()?;
        let (model, store) = ckpt.restore_model()?;
        if model.config() != &ckpt.config.model() {
            return Err(Error::Checkpoint("model layout differs from the stored config".into()));
        }
        let optimizer = ckpt.restore_optimizer(&store)?;
        Ok(Self {
            config: ckpt.config.clone(),
            model,
            store,
            optimizer,
            epoch: ckpt.epoch,
            step: ckpt.step,
            shuffle_rng: ckpt.shuffle_rng.clone(),
            noise_rng: ckpt.noise_rng.clone(),
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT,
            epoch: self.epoch,
            step: self.step,
            gamma: self.gamma(),
            config: self.config.clone(),
            model: self.model.clone(),
            params: Checkpoint::store_params(&self.store),
            optimizer: Checkpoint::store_optimizer(&self.optimizer),
            shuffle_rng: self.shuffle_rng.clone(),
            noise_rng: self.noise_rng.clone(),
        }
    }

    pub fn gamma(&self) -> f64 {
        self.model.fusion().gamma(&self.store)
    }

    /// One optimizer step on `batch` with freshly drawn mask noise.
    pub fn train_step(&mut self, batch: &[&LabeledImage], total_steps: u64) -> Result<StepLog> {
        let (images, masks) = batch_tensors(batch)?;
        let noisy: Vec<_> = batch
            .iter()
            .map(|s| {
                let seed = next_noise_seed(&mut self.noise_rng);
                inject_mask_noise_in(&s.mask, self.config.mask_noise_gamma, seed, self.config.noise_region)
                    .map(|n| n.mask.to_tensor())
            })
            .collect::<Result<_>>()?;
        let noisy = Tensor::stack(&noisy)?;

        let lambdas = self.config.lambdas();
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let (x, m, nm) = (g.constant(images), g.constant(masks), g.constant(noisy));
        let out = self.model.forward_train(&mut g, &p, x, nm, m, &self.config.objective())?;
        let losses = out.losses.bundle(&g, lambdas);
        if !losses.is_finite() {
            return Err(Error::Divergence {
                step: self.step,
                batch_ids: batch.iter().map(|s| s.id.clone()).collect(),
                components: format!(
                    "loc={} su={} mi={} aux={} total={}",
                    losses.loc, losses.su, losses.mi, losses.aux, losses.total
                ),
            });
        }
        let mut grads = g.backward(out.losses.total)?;
        let grads = self.store.collect_grads(&p, &mut grads);
        drop(g);
        let lr = cosine_lr(self.config.lr, self.step, total_steps);
        self.optimizer.update(self.store.values_mut(), &grads, lr);
        self.model.fusion().project(&mut self.store);
        self.step += 1;
        Ok(StepLog {
            epoch: self.epoch,
            step: self.step,
            lr,
            gamma: self.gamma(),
            losses,
        })
    }

    /// Runs one shuffled pass, or stops early at the step limit. Returns
    /// whether the epoch was completed.
    pub fn run_epoch(
        &mut self,
        data: &[LabeledImage],
        total_steps: u64,
        on_step: &mut dyn FnMut(&StepLog) -> Result<()>,
    ) -> Result<bool> {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.shuffle_rng);
        for chunk in order.chunks(self.config.batch_size) {
            if self.step >= total_steps {
                return Ok(false);
            }
            let batch: Vec<&LabeledImage> = chunk.iter().map(|&i| &data[i]).collect();
            let log = self.train_step(&batch, total_steps)?;
            on_step(&log)?;
        }
        self.epoch += 1;
        Ok(true)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub trainer: Trainer,
    pub log: Vec<StepLog>,
    pub seconds: f64,
}

/// Trains from scratch, or continues `resume` up to the configured epochs.
/// With a run directory, writes the config snapshot, the step log and a
/// checkpoint after every epoch.
pub fn train(
    cfg: &TrainConfig,
    data: &[LabeledImage],
    resume: Option<&Checkpoint>,
    run: Option<&RunDir>,
) -> Result<TrainOutcome> {
    forgeloc_tensor::retain_freed_memory();
    let mut trainer = match resume {
        Some(c) => Trainer::from_checkpoint(c)?,
        None => Trainer::new(cfg.clone())?,
    };
    let cfg = trainer.config.clone();
    check_sizes(&cfg, data)?;
    let total = cfg.total_steps(data.len());
    let mut writer = match run {
        Some(r) => {
            r.write_config(&cfg)?;
            Some(JsonlWriter::create(r.join(TRAIN_LOG))?)
        }
        None => None,
    };
    let start = Instant::now();
    let mut log = Vec::new();
    log::info!(
        "training {} params on {} samples for {total} steps",
        trainer.store.num_scalars(),
        data.len()
    );
    while (trainer.epoch as usize) < cfg.epochs && trainer.step < total {
        let result = trainer.run_epoch(data, total, &mut |s| {
            if let Some(w) = writer.as_mut() {
                w.write(s)?;
            }
            log.push(s.clone());
            Ok(())
        });
        if let Some(w) = writer.as_mut() {
            w.flush()?;
        }
        let completed = match result {
            Ok(c) => c,
            Err(e) => {
                if let (Some(r), Error::Divergence { .. }) = (run, &e) {
                    r.write_text("divergence.txt", &format!("{e}\n"))?;
                }
                return Err(e);
            }
        };
        if let Some(last) = log.last() {
            log::info!(
                "epoch {} step {} loss {:.4} (loc {:.4}) gamma {:.4}",
                trainer.epoch,
                last.step,
                last.losses.total,
                last.losses.loc,
                last.gamma
            );
        }
        if let (Some(r), true) = (run, completed) {
            trainer.checkpoint().save(&r.checkpoint_path(trainer.epoch))?;
        }
        if !completed {
            break;
        }
    }
    if let Some(r) = run {
        trainer.checkpoint().save(&r.final_checkpoint_path())?;
    }
    Ok(TrainOutcome {
        trainer,
        log,
        seconds: start.elapsed().as_secs_f64(),
    })
}
