use forgeloc_tensor::{Graph, Real, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::layers::{Conv2d, ConvNormAct};
use crate::params::{Bound, ParamStore};
use crate::{Error, Result};

const CHANNEL_REDUCTION: usize = 4;
const SPATIAL_KERNEL: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    Channel,
    Spatial,
    Pixel,
}

impl AttentionKind {
    pub const ALL: [AttentionKind; 3] = [Self::Channel, Self::Spatial, Self::Pixel];
}

fn ensure_finite<T: Real>(g: &Graph<T>, x: Var, what: &str) -> Result<()> {
    if g.value(x).is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} input")))
    }
}

/// Per-channel gate from globally pooled statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelAttention {
    reduce: Conv2d,
    expand: Conv2d,
}

impl ChannelAttention {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut impl Rng, name: &str, channels: usize) -> Self {
        let hidden = (channels / CHANNEL_REDUCTION).max(1);
        Self {
            reduce: Conv2d::new(store, rng, &format!("{name}.reduce"), channels, hidden, 1, 1, true),
            expand: Conv2d::new(store, rng, &format!("{name}.expand"), hidden, channels, 1, 1, true),
        }
    }

    /// `N×C×1×1` gate.
    pub fn gate<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        ensure_finite(g, x, "channel attention")?;
        let pooled = g.mean_axes(x, &[2, 3])?;
        let h = self.reduce.forward(g, p, pooled)?;
        let h = g.relu(h);
        let logits = self.expand.forward(g, p, h)?;
        Ok(g.sigmoid(logits))
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let gate = self.gate(g, p, x)?;
        Ok(g.mul(x, gate)?)
    }

    pub fn zero_gate<T: Real>(&self, store: &mut ParamStore<T>) {
        self.expand.zero(store);
    }
}

/// Per-position gate from channel-wise mean and max.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialAttention {
    conv: Conv2d,
}

impl SpatialAttention {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut impl Rng, name: &str) -> Self {
        Self {
            conv: Conv2d::new(store, rng, &format!("{name}.conv"), 2, 1, SPATIAL_KERNEL, 1, true),
        }
    }

    /// `N×1×H×W` gate.
    pub fn gate<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        ensure_finite(g, x, "spatial attention")?;
        let avg = g.mean_axes(x, &[1])?;
        let max = g.max_channels(x);
        let pooled = g.concat_channels(&[avg, max])?;
        let logits = self.conv.forward(g, p, pooled)?;
        Ok(g.sigmoid(logits))
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let gate = self.gate(g, p, x)?;
        Ok(g.mul(x, gate)?)
    }

    pub fn zero_gate<T: Real>(&self, store: &mut ParamStore<T>) {
        self.conv.zero(store);
    }
}

/// Full-resolution per-channel gate from pointwise transforms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelAttention {
    first: Conv2d,
    second: Conv2d,
}

impl PixelAttention {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut impl Rng, name: &str, channels: usize) -> Self {
        Self {
            first: Conv2d::new(store, rng, &format!("{name}.first"), channels, channels, 1, 1, true),
            second: Conv2d::new(store, rng, &format!("{name}.second"), channels, channels, 1, 1, true),
        }
    }

    /// `N×C×H×W` gate.
    pub fn gate<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        ensure_finite(g, x, "pixel attention")?;
        let h = self.first.forward(g, p, x)?;
        let h = g.relu(h);
        let logits = self.second.forward(g, p, h)?;
        Ok(g.sigmoid(logits))
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let gate = self.gate(g, p, x)?;
        Ok(g.mul(x, gate)?)
    }

    pub fn zero_gate<T: Real>(&self, store: &mut ParamStore<T>) {
        self.second.zero(store);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Attention {
    Channel(ChannelAttention),
    Spatial(SpatialAttention),
    Pixel(PixelAttention),
}

impl Attention {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        kind: AttentionKind,
        channels: usize,
    ) -> Self {
        match kind {
            AttentionKind::Channel => Self::Channel(ChannelAttention::new(store, rng, name, channels)),
            AttentionKind::Spatial => Self::Spatial(SpatialAttention::new(store, rng, name)),
            AttentionKind::Pixel => Self::Pixel(PixelAttention::new(store, rng, name, channels)),
        }
    }

    pub fn gate<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        match self {
            Self::Channel(a) => a.gate(g, p, x),
            Self::Spatial(a) => a.gate(g, p, x),
            Self::Pixel(a) => a.gate(g, p, x),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        match self {
            Self::Channel(a) => a.forward(g, p, x),
            Self::Spatial(a) => a.forward(g, p, x),
            Self::Pixel(a) => a.forward(g, p, x),
        }
    }

    pub fn zero_gate<T: Real>(&self, store: &mut ParamStore<T>) {
        match self {
            Self::Channel(a) => a.zero_gate(store),
            Self::Spatial(a) => a.zero_gate(store),
            Self::Pixel(a) => a.zero_gate(store),
        }
    }
}

/// A 3×3 conv block, optionally followed by an attention gate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    conv: ConvNormAct,
    attention: Option<Attention>,
}

impl Block {
    fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        cin: usize,
        cout: usize,
        attention: Option<AttentionKind>,
    ) -> Self {
        Self {
            conv: ConvNormAct::new(store, rng, name, cin, cout, 3, 1),
            attention: attention.map(|k| Attention::new(store, rng, &format!("{name}.att"), k, cout)),
        }
    }

    fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let y = self.conv.forward(g, p, x)?;
        match &self.attention {
            Some(a) => a.forward(g, p, y),
            None => Ok(y),
        }
    }
}

/// Layout of a [`UNet`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UNetSpec {
    pub in_channels: usize,
    pub base_channels: usize,
    /// Channel multiplier per level.
    pub growth: usize,
    pub depth: usize,
    pub blocks_per_scale: usize,
    pub attention: Option<AttentionKind>,
}

/// Encoder–decoder with skip connections; the output has `base_channels`
/// channels at the input resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UNet {
    spec: UNetSpec,
    encoder: Vec<Vec<Block>>,
    down: Vec<ConvNormAct>,
    up: Vec<Conv2d>,
    decoder: Vec<Vec<Block>>,
}

impl UNet {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut impl Rng, name: &str, spec: UNetSpec) -> Result<Self> {
        if spec.depth == 0 || spec.blocks_per_scale == 0 || spec.base_channels == 0 || spec.growth == 0 {
            return Err(Error::Config(format!("invalid U-Net layout {spec:?}")));
        }
        let width = |l: usize| spec.base_channels * spec.growth.pow(l as u32);
        let blocks = |store: &mut ParamStore<T>, rng: &mut _, prefix: String, cin: usize, c: usize| -> Vec<Block> {
            (0..spec.blocks_per_scale)
                .map(|b| {
                    let cin = if b == 0 { cin } else { c };
                    Block::new(store, rng, &format!("{prefix}.{b}"), cin, c, spec.attention)
                })
                .collect()
        };
        let mut encoder = Vec::new();
        let mut down = Vec::new();
        for l in 0..spec.depth {
            let cin = if l == 0 {
                spec.in_channels
            } else {
                down.push(ConvNormAct::new(store, rng, &format!("{name}.down{l}"), width(l - 1), width(l), 3, 2));
                width(l)
            };
            encoder.push(blocks(store, rng, format!("{name}.enc{l}"), cin, width(l)));
        }
        let mut up = Vec::new();
        let mut decoder = Vec::new();
        for l in (0..spec.depth - 1).rev() {
            up.push(Conv2d::new(store, rng, &format!("{name}.up{l}"), width(l + 1), width(l), 1, 1, true));
            decoder.push(blocks(store, rng, format!("{name}.dec{l}"), 2 * width(l), width(l)));
        }
        Ok(Self {
            spec,
            encoder,
            down,
            up,
            decoder,
        })
    }

    pub fn spec(&self) -> &UNetSpec {
        &self.spec
    }

    pub fn check_input(&self, shape: [usize; 4]) -> Result<()> {
        let [_, c, h, w] = shape;
        let unit = 1 << (self.spec.depth - 1);
        if c != self.spec.in_channels {
            return Err(Error::Config(format!(
                "expected {} input channels, got {c}",
                self.spec.in_channels
            )));
        }
        if h == 0 || w == 0 || h % unit != 0 || w % unit != 0 {
            return Err(Error::Config(format!(
                "input {h}x{w} must be a non-empty multiple of {unit} for depth {}",
                self.spec.depth
            )));
        }
        Ok(())
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        self.check_input(g.shape(x))?;
        let mut skips = Vec::with_capacity(self.spec.depth);
        let mut h = x;
        for (l, level) in self.encoder.iter().enumerate() {
            if l > 0 {
                h = self.down[l - 1].forward(g, p, h)?;
            }
            for block in level {
                h = block.forward(g, p, h)?;
            }
            skips.push(h);
        }
        skips.pop();
        for (up, level) in self.up.iter().zip(&self.decoder) {
            let skip = skips.pop().expect("one skip per decoder level");
            let u = up.forward(g, p, h)?;
            let u = g.upsample_nearest(u, 2)?;
            h = g.concat_channels(&[u, skip])?;
            for block in level {
                h = block.forward(g, p, h)?;
            }
        }
        Ok(h)
    }

    /// Every attention module, encoder first.
    pub fn attentions(&self) -> impl Iterator<Item = &Attention> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .flatten()
            .filter_map(|b| b.attention.as_ref())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub depth: usize,
    pub blocks_per_scale: usize,
    pub base_channels: usize,
    pub attention_kind: AttentionKind,
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.blocks_per_scale == 0 || self.base_channels == 0 {
            return Err(Error::Config(format!(
                "backbone depth, blocks_per_scale and base_channels must be ≥ 1 (got {self:?})"
            )));
        }
        Ok(())
    }
}

/// Attention U-Net mapping an RGB image to a feature map with
/// `base_channels` channels at full resolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Backbone {
    config: BackboneConfig,
    net: UNet,
}

impl Backbone {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        config: BackboneConfig,
    ) -> Result<Self> {
        config.validate()?;
        let net = UNet::new(
            store,
            rng,
            name,
            UNetSpec {
                in_channels: 3,
                base_channels: config.base_channels,
                growth: 2,
                depth: config.depth,
                blocks_per_scale: config.blocks_per_scale,
                attention: Some(config.attention_kind),
            },
        )?;
        Ok(Self { config, net })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        self.net.forward(g, p, x)
    }

    pub fn attentions(&self) -> impl Iterator<Item = &Attention> {
        self.net.attentions()
    }
}
