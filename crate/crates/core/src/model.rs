use forgeloc_tensor::{Graph, Real, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbones::{AttentionKind, Backbone, BackboneConfig};
use crate::fusion::Fusion;
use crate::objectives::{
    auxiliary_loss, combine, localization_loss, minimality_loss, sufficiency_loss, Lambdas, LossVars, MiKlMode,
    SuAggregate, DEFAULT_PROB_CLAMP_EPS,
};
use crate::params::{Bound, ParamStore};
use crate::reasoning::{MaskEncoder, PredictorHead, ReasoningConfig, ReasoningNetwork};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone_depth: usize,
    pub backbone_blocks: usize,
    /// Width of every backbone output, of `F`, `Z` and the mask embedding.
    pub base_channels: usize,
    pub reasoning: ReasoningConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone_depth: 2,
            backbone_blocks: 1,
            base_channels: 8,
            reasoning: ReasoningConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn backbone(&self, attention_kind: AttentionKind) -> BackboneConfig {
        BackboneConfig {
            depth: self.backbone_depth,
            blocks_per_scale: self.backbone_blocks,
            base_channels: self.base_channels,
            attention_kind,
        }
    }

    /// Side lengths must be multiples of this.
    pub fn size_unit(&self) -> usize {
        let levels = self.backbone_depth.max(self.reasoning.depth).max(1);
        1 << (levels - 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub lambdas: Lambdas,
    pub mi_kl_mode: MiKlMode,
    pub su_aggregate: SuAggregate,
    /// Stop gradients through the leave-one-out predictions.
    pub detach_loo: bool,
    pub prob_clamp_eps: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            lambdas: Lambdas::default(),
            mi_kl_mode: MiKlMode::default(),
            su_aggregate: SuAggregate::default(),
            detach_loo: false,
            prob_clamp_eps: DEFAULT_PROB_CLAMP_EPS,
        }
    }
}

/// Nodes produced by one training forward pass.
#[derive(Clone, Copy, Debug)]
pub struct TrainOutputs {
    pub features: [Var; 3],
    pub fused: Var,
    pub p_full: Var,
    pub p_loo: [Var; 3],
    pub z: Var,
    pub embedding: Var,
    pub pred: Var,
    pub aux_pred: Var,
    pub losses: LossVars,
}

/// Three attention backbones, learnable fusion, reasoning network, mask
/// encoder and one shared predictor head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForgeryModel {
    config: ModelConfig,
    backbones: [Backbone; 3],
    fusion: Fusion,
    reasoning: ReasoningNetwork,
    mask_encoder: MaskEncoder,
    head: PredictorHead,
}

impl ForgeryModel {
    /// Builds the model and a freshly initialised parameter store.
    pub fn init<T: Real>(config: ModelConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [a, b, c] = AttentionKind::ALL;
        let backbones = [
            Backbone::new(&mut store, &mut rng, "backbone.channel", config.backbone(a))?,
            Backbone::new(&mut store, &mut rng, "backbone.spatial", config.backbone(b))?,
            Backbone::new(&mut store, &mut rng, "backbone.pixel", config.backbone(c))?,
        ];
        let fusion = Fusion::new(&mut store, "fusion");
        let ch = config.base_channels;
        let reasoning = ReasoningNetwork::new(&mut store, &mut rng, "reasoning", ch, &config.reasoning)?;
        let mask_encoder = MaskEncoder::new(&mut store, &mut rng, "mask_encoder", ch);
        let head = PredictorHead::new(&mut store, &mut rng, "head", ch);
        let model = Self {
            config,
            backbones,
            fusion,
            reasoning,
            mask_encoder,
            head,
        };
        Ok((model, store))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn backbones(&self) -> &[Backbone; 3] {
        &self.backbones
    }

    pub fn fusion(&self) -> &Fusion {
        &self.fusion
    }

    pub fn reasoning(&self) -> &ReasoningNetwork {
        &self.reasoning
    }

    pub fn mask_encoder(&self) -> &MaskEncoder {
        &self.mask_encoder
    }

    pub fn head(&self) -> &PredictorHead {
        &self.head
    }

    pub fn features<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<[Var; 3]> {
        Ok([
            self.backbones[0].forward(g, p, x)?,
            self.backbones[1].forward(g, p, x)?,
            self.backbones[2].forward(g, p, x)?,
        ])
    }

    /// Inference path: head(reason(fuse(features))).
    pub fn predict<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let fs = self.features(g, p, x)?;
        let fused = self.fusion.fuse(g, p, &fs)?;
        let z = self.reasoning.forward(g, p, fused)?;
        self.head.forward(g, p, z)
    }

    /// Full training graph for a batch of images, noisy masks and clean masks.
    pub fn forward_train<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        images: Var,
        noisy_masks: Var,
        masks: Var,
        objective: &ObjectiveConfig,
    ) -> Result<TrainOutputs> {
        let [n, _, h, w] = g.shape(images);
        for (what, v) in [("noisy masks", noisy_masks), ("masks", masks)] {
            if g.shape(v) != [n, 1, h, w] {
                return Err(Error::Shape(format!(
                    "{what} {:?} do not match images {:?}",
                    g.shape(v),
                    g.shape(images)
                )));
            }
        }
        let eps = objective.prob_clamp_eps;
        let features = self.features(g, p, images)?;
        let fused = self.fusion.fuse(g, p, &features)?;
        let p_full = self.head.forward(g, p, fused)?;
        let mut p_loo = [p_full; 3];
        for (i, slot) in p_loo.iter_mut().enumerate() {
            let f = self.fusion.fuse_leave_one_out(g, p, &features, i)?;
            let q = self.head.forward(g, p, f)?;
            *slot = if objective.detach_loo { g.detach(q) } else { q };
        }
        let z = self.reasoning.forward(g, p, fused)?;
        let pred = self.head.forward(g, p, z)?;
        let embedding = self.mask_encoder.forward(g, p, noisy_masks)?;
        let aux_pred = self.head.forward(g, p, embedding)?;

        let loc = localization_loss(g, pred, masks, eps)?;
        let su = sufficiency_loss(g, p_full, &p_loo, eps, objective.su_aggregate)?;
        let mi = minimality_loss(g, z, embedding, objective.mi_kl_mode)?;
        let aux = auxiliary_loss(g, aux_pred, masks, eps)?;
        let losses = combine(g, &objective.lambdas, loc, su, mi, aux)?;
        Ok(TrainOutputs {
            features,
            fused,
            p_full,
            p_loo,
            z,
            embedding,
            pred,
            aux_pred,
            losses,
        })
    }
}
