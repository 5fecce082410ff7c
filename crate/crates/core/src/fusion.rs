use forgeloc_tensor::{Graph, Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::params::{Bound, ParamId, ParamStore};
use crate::{Error, Result};

pub const GAMMA_INIT: f64 = 1.0 / 3.0;
/// Distance kept between γ and the ends of `[0, 1]`.
pub const GAMMA_EPS: f64 = 1e-3;

/// Mixing weights `((1−γ)/2, γ, (1−γ)/2)`.
pub fn coefficients(gamma: f64) -> [f64; 3] {
    let side = (1.0 - gamma) / 2.0;
    [side, gamma, side]
}

/// Weights with branch `drop` removed and the survivors rescaled to sum to 1.
pub fn leave_one_out_coefficients(gamma: f64, drop: usize) -> Result<[f64; 3]> {
    check_branch(drop)?;
    let mut c = coefficients(gamma);
    c[drop] = 0.0;
    let total: f64 = c.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "γ = {gamma} leaves no weight after dropping branch {drop}"
        )));
    }
    Ok(c.map(|v| v / total))
}

fn check_branch(i: usize) -> Result<()> {
    if i < 3 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("branch index {i} outside 0..3")))
    }
}

/// Learnable blend of three feature maps controlled by one scalar γ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fusion {
    gamma: ParamId,
}

impl Fusion {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::scalar(T::of(GAMMA_INIT))),
        }
    }

    pub fn gamma_id(&self) -> ParamId {
        self.gamma
    }

    pub fn gamma<T: Real>(&self, store: &ParamStore<T>) -> f64 {
        store.get(self.gamma).item().to_f64().unwrap_or(f64::NAN)
    }

    pub fn set_gamma<T: Real>(&self, store: &mut ParamStore<T>, gamma: f64) {
        store.get_mut(self.gamma).data_mut()[0] = T::of(gamma);
    }

    /// Pulls the stored γ back into `[ε, 1−ε]` after an optimiser step.
    pub fn project<T: Real>(&self, store: &mut ParamStore<T>) {
        let v = self.gamma(store).clamp(GAMMA_EPS, 1.0 - GAMMA_EPS);
        self.set_gamma(store, v);
    }

    /// The forward pass only clamps to `[0, 1]`; the tighter range is kept by
    /// [`Fusion::project`] so that the endpoints stay exactly reachable.
    fn weights<T: Real>(&self, g: &mut Graph<T>, p: &Bound) -> [Var; 3] {
        let gamma = g.clamp(p[self.gamma], 0.0, 1.0);
        let side = g.affine(gamma, -0.5, 0.5);
        [side, gamma, side]
    }

    fn mix<T: Real>(g: &mut Graph<T>, fs: &[Var; 3], weights: &[(usize, Var)]) -> Result<Var> {
        let shape = g.shape(fs[0]);
        for f in &fs[1..] {
            if g.shape(*f) != shape {
                return Err(Error::Shape(format!(
                    "fusion inputs differ: {shape:?} vs {:?}",
                    g.shape(*f)
                )));
            }
        }
        let mut acc: Option<Var> = None;
        for &(i, w) in weights {
            let term = g.mul(fs[i], w)?;
            acc = Some(match acc {
                Some(a) => g.add(a, term)?,
                None => term,
            });
        }
        Ok(acc.expect("at least one weight"))
    }

    pub fn fuse<T: Real>(&self, g: &mut Graph<T>, p: &Bound, fs: &[Var; 3]) -> Result<Var> {
        let w = self.weights(g, p);
        Self::mix(g, fs, &[(0, w[0]), (1, w[1]), (2, w[2])])
    }

    /// Fusion without branch `drop` (0-based).
    pub fn fuse_leave_one_out<T: Real>(&self, g: &mut Graph<T>, p: &Bound, fs: &[Var; 3], drop: usize) -> Result<Var> {
        check_branch(drop)?;
        let w = self.weights(g, p);
        let keep: Vec<usize> = (0..3).filter(|&i| i != drop).collect();
        let total = g.add(w[keep[0]], w[keep[1]])?;
        if g.value(total).item() <= T::zero() {
            return Err(Error::InvalidArgument(format!(
                "γ leaves no weight after dropping branch {drop}"
            )));
        }
        let a = g.div(w[keep[0]], total)?;
        let b = g.div(w[keep[1]], total)?;
        Self::mix(g, fs, &[(keep[0], a), (keep[1], b)])
    }
}
