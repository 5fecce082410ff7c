use forgeloc_tensor::{Graph, Real, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::params::{Bound, ParamId, ParamStore};
use crate::Result;

const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub(crate) weight: ParamId,
    pub(crate) bias: Option<ParamId>,
    stride: usize,
    pad: usize,
}

impl Conv2d {
    /// `k×k` convolution with "same" padding for odd `k`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        bias: bool,
    ) -> Self {
        let weight = store.add_he(format!("{name}.weight"), [cout, cin, k, k], cin * k * k, rng);
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros([1, cout, 1, 1])));
        Self {
            weight,
            bias,
            stride,
            pad: k / 2,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        Ok(g.conv2d(x, p[self.weight], self.bias.map(|b| p[b]), self.stride, self.pad)?)
    }

    pub fn zero<T: Real>(&self, store: &mut ParamStore<T>) {
        for id in std::iter::once(self.weight).chain(self.bias) {
            store.get_mut(id).data_mut().fill(T::zero());
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

/// Largest group count ≤ 4 that divides `channels`.
fn groups_for(channels: usize) -> usize {
    (1..=4.min(channels)).rev().find(|g| channels % g == 0).unwrap_or(1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupNorm {
    gamma: ParamId,
    beta: ParamId,
    groups: usize,
}

impl GroupNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full([1, channels, 1, 1], T::one())),
            beta: store.add(format!("{name}.beta"), Tensor::zeros([1, channels, 1, 1])),
            groups: groups_for(channels),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        Ok(g.group_norm(x, p[self.gamma], p[self.beta], self.groups, NORM_EPS)?)
    }
}

/// Convolution, group normalisation, ReLU.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvNormAct {
    conv: Conv2d,
    norm: GroupNorm,
}

impl ConvNormAct {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
    ) -> Self {
        Self {
            conv: Conv2d::new(store, rng, &format!("{name}.conv"), cin, cout, k, stride, false),
            norm: GroupNorm::new(store, &format!("{name}.norm"), cout),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let y = self.conv.forward(g, p, x)?;
        let y = self.norm.forward(g, p, y)?;
        Ok(g.relu(y))
    }
}
