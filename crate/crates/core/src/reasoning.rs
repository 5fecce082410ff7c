use forgeloc_tensor::{Graph, Real, Var};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbones::{UNet, UNetSpec};
use crate::layers::{Conv2d, ConvNormAct};
use crate::params::{Bound, ParamId, ParamStore};
use crate::types::ForgeryMask;
use crate::{Error, Result};

pub const DEFAULT_MASK_NOISE_GAMMA: f64 = 0.05;

/// Where flipped positions may fall.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseRegion {
    #[default]
    WholeGrid,
    /// Only tampered pixels; the count is capped at their number.
    TamperedOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisyMask {
    pub mask: ForgeryMask,
    pub noise_fraction: f64,
    pub flipped: usize,
}

/// Number of flipped positions for a `len`-pixel mask.
pub fn noise_count(gamma: f64, len: usize) -> usize {
    (gamma * len as f64).floor() as usize
}

/// Inverts `floor(γ·H·W)` distinct positions chosen uniformly over the grid.
pub fn inject_mask_noise(mask: &ForgeryMask, gamma: f64, seed: u64) -> Result<NoisyMask> {
    inject_mask_noise_in(mask, gamma, seed, NoiseRegion::WholeGrid)
}

pub fn inject_mask_noise_in(mask: &ForgeryMask, gamma: f64, seed: u64, region: NoiseRegion) -> Result<NoisyMask> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!("noise fraction {gamma} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = mask.clone();
    let want = noise_count(gamma, mask.len());
    let flipped = match region {
        NoiseRegion::WholeGrid => {
            for i in index::sample(&mut rng, mask.len(), want) {
                out.flip(i);
            }
            want
        }
        NoiseRegion::TamperedOnly => {
            let candidates: Vec<usize> = (0..mask.len()).filter(|&i| mask.data()[i] == 1).collect();
            let k = want.min(candidates.len());
            for i in index::sample(&mut rng, candidates.len(), k) {
                out.flip(candidates[i]);
            }
            k
        }
    };
    Ok(NoisyMask {
        mask: out,
        noise_fraction: gamma,
        flipped,
    })
}

/// Draws a fresh per-step noise seed.
pub fn next_noise_seed(rng: &mut impl Rng) -> u64 {
    rng.random()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReasoningConfig {
    /// U-Net levels; 0 makes the network the identity.
    pub depth: usize,
    pub blocks_per_scale: usize,
}

impl Default for ReasoningConfig {
    fn default() -> Self {
        Self {
            depth: 2,
            blocks_per_scale: 1,
        }
    }
}

/// Encoder–decoder from the fused feature `F` to the concise feature `Z`,
/// keeping `F`'s width and resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReasoningNetwork {
    net: Option<UNet>,
}

impl ReasoningNetwork {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        channels: usize,
        config: &ReasoningConfig,
    ) -> Result<Self> {
        if config.depth == 0 {
            return Ok(Self { net: None });
        }
        let spec = UNetSpec {
            in_channels: channels,
            base_channels: channels,
            growth: 1,
            depth: config.depth,
            blocks_per_scale: config.blocks_per_scale,
            attention: None,
        };
        Ok(Self {
            net: Some(UNet::new(store, rng, name, spec)?),
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, f: Var) -> Result<Var> {
        if !g.value(f).is_finite() {
            return Err(Error::NonFinite("reasoning input".into()));
        }
        match &self.net {
            Some(net) => net.forward(g, p, f),
            None => Ok(f),
        }
    }
}

/// Projects a one-channel mask into the feature space of `Z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskEncoder {
    layers: [ConvNormAct; 2],
}

impl MaskEncoder {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut impl Rng, name: &str, channels: usize) -> Self {
        Self {
            layers: [
                ConvNormAct::new(store, rng, &format!("{name}.0"), 1, channels, 3, 1),
                ConvNormAct::new(store, rng, &format!("{name}.1"), channels, channels, 3, 1),
            ],
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, mask: Var) -> Result<Var> {
        let [_, c, _, _] = g.shape(mask);
        if c != 1 {
            return Err(Error::Shape(format!("mask encoder expects one channel, got {c}")));
        }
        let h = self.layers[0].forward(g, p, mask)?;
        self.layers[1].forward(g, p, h)
    }
}

/// Shared head mapping a feature map to per-pixel tamper probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorHead {
    hidden: Conv2d,
    output: Conv2d,
}

impl PredictorHead {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut impl Rng, name: &str, channels: usize) -> Self {
        Self {
            hidden: Conv2d::new(store, rng, &format!("{name}.hidden"), channels, channels, 1, 1, true),
            output: Conv2d::new(store, rng, &format!("{name}.output"), channels, 1, 1, 1, true),
        }
    }

    pub fn logits<T: Real>(&self, g: &mut Graph<T>, p: &Bound, z: Var) -> Result<Var> {
        if !g.value(z).is_finite() {
            return Err(Error::NonFinite("predictor input".into()));
        }
        let h = self.hidden.forward(g, p, z)?;
        let h = g.relu(h);
        self.output.forward(g, p, h)
    }

    /// `N×1×H×W` probabilities.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, z: Var) -> Result<Var> {
        let logits = self.logits(g, p, z)?;
        Ok(g.sigmoid(logits))
    }

    pub fn zero_output<T: Real>(&self, store: &mut ParamStore<T>) {
        self.output.zero(store);
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut ids = self.hidden.params();
        ids.extend(self.output.params());
        ids
    }
}
