use forgeloc_tensor::{Graph, Real, Var};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_PROB_CLAMP_EPS: f64 = 1e-6;

/// How the minimality term compares `Z` with the mask embedding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiKlMode {
    /// Channel softmax per position, categorical KL.
    #[default]
    Categorical,
    /// Unit-variance Gaussians, KL = ½‖z − e‖² per position.
    Gaussian,
}

/// Reduction of the per-branch `exp(−KL)` terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuAggregate {
    #[default]
    Mean,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lambdas {
    pub su: f64,
    pub mi: f64,
    pub aux: f64,
}

impl Default for Lambdas {
    fn default() -> Self {
        Self {
            su: 0.1,
            mi: 1.0,
            aux: 0.1,
        }
    }
}

impl Lambdas {
    pub fn validate(&self) -> Result<()> {
        if [self.su, self.mi, self.aux].iter().all(|l| l.is_finite() && *l >= 0.0) {
            Ok(())
        } else {
            Err(Error::Config(format!("loss weights must be finite and ≥ 0, got {self:?}")))
        }
    }
}

/// Scalar values of every loss term for one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub loc: f64,
    pub su: f64,
    pub mi: f64,
    pub aux: f64,
    pub total: f64,
    pub lambdas: Lambdas,
}

impl LossBundle {
    pub fn new(loc: f64, su: f64, mi: f64, aux: f64, lambdas: Lambdas) -> Self {
        let mut b = Self {
            loc,
            su,
            mi,
            aux,
            total: 0.0,
            lambdas,
        };
        b.total = total_loss(&b);
        b
    }

    pub fn is_finite(&self) -> bool {
        [self.loc, self.su, self.mi, self.aux, self.total].iter().all(|v| v.is_finite())
    }
}

/// `loc + λ_su·su + λ_mi·mi + λ_aux·aux`; a term with zero weight is left out
/// entirely.
pub fn total_loss(b: &LossBundle) -> f64 {
    let mut total = b.loc;
    for (lambda, v) in [(b.lambdas.su, b.su), (b.lambdas.mi, b.mi), (b.lambdas.aux, b.aux)] {
        if lambda != 0.0 {
            total += lambda * v;
        }
    }
    total
}

fn same_shape<T: Real>(g: &Graph<T>, a: Var, b: Var, what: &str) -> Result<()> {
    if g.shape(a) == g.shape(b) {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            g.shape(a),
            g.shape(b)
        )))
    }
}

/// Per-pixel `KL(Bern(p) ‖ Bern(q))` after clamping both to `[ε, 1−ε]`.
pub fn bernoulli_kl<T: Real>(g: &mut Graph<T>, p: Var, q: Var, eps: f64) -> Result<Var> {
    same_shape(g, p, q, "bernoulli KL")?;
    let p = g.clamp(p, eps, 1.0 - eps);
    let q = g.clamp(q, eps, 1.0 - eps);
    let np = g.affine(p, -1.0, 1.0);
    let nq = g.affine(q, -1.0, 1.0);
    let (lp, lq, lnp, lnq) = (g.ln(p), g.ln(q), g.ln(np), g.ln(nq));
    let d1 = g.sub(lp, lq)?;
    let d0 = g.sub(lnp, lnq)?;
    let t1 = g.mul(p, d1)?;
    let t0 = g.mul(np, d0)?;
    Ok(g.add(t1, t0)?)
}

/// Batch mean of the reduced `exp(−KLᵢ)` terms, where `KLᵢ` is the
/// pixel-averaged KL between `p_full` and `p_loo[i]` for each sample.
pub fn sufficiency_loss<T: Real>(
    g: &mut Graph<T>,
    p_full: Var,
    p_loo: &[Var],
    eps: f64,
    aggregate: SuAggregate,
) -> Result<Var> {
    if p_loo.is_empty() {
        return Err(Error::InvalidArgument("sufficiency loss needs at least one branch".into()));
    }
    let mut terms = Vec::with_capacity(p_loo.len());
    for &q in p_loo {
        let kl = bernoulli_kl(g, p_full, q, eps)?;
        let kl = g.mean_axes(kl, &[1, 2, 3])?;
        // Rounding can push an average of non-negative terms a hair below zero.
        let kl = g.relu(kl);
        let neg = g.scale(kl, -1.0);
        terms.push(g.exp(neg));
    }
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = match aggregate {
            SuAggregate::Mean => g.add(acc, t)?,
            SuAggregate::Max => g.maximum(acc, t)?,
        };
    }
    if aggregate == SuAggregate::Mean {
        acc = g.scale(acc, 1.0 / terms.len() as f64);
    }
    Ok(g.mean_all(acc))
}

/// Per-position KL between `Z` and the mask embedding, averaged over
/// positions and batch.
pub fn minimality_loss<T: Real>(g: &mut Graph<T>, z: Var, e: Var, mode: MiKlMode) -> Result<Var> {
    same_shape(g, z, e, "minimality loss")?;
    let per_position = match mode {
        MiKlMode::Categorical => {
            let lp = g.log_softmax_channels(z);
            let lq = g.log_softmax_channels(e);
            let p = g.exp(lp);
            let d = g.sub(lp, lq)?;
            let t = g.mul(p, d)?;
            g.sum_axis(t, 1)?
        }
        MiKlMode::Gaussian => {
            let d = g.sub(z, e)?;
            let sq = g.mul(d, d)?;
            let s = g.sum_axis(sq, 1)?;
            g.scale(s, 0.5)
        }
    };
    let mean = g.mean_all(per_position);
    Ok(g.relu(mean))
}

/// Mean binary cross-entropy of `pred` against a `{0,1}` target.
pub fn localization_loss<T: Real>(g: &mut Graph<T>, pred: Var, mask: Var, eps: f64) -> Result<Var> {
    same_shape(g, pred, mask, "cross-entropy")?;
    let p = g.clamp(pred, eps, 1.0 - eps);
    let np = g.affine(p, -1.0, 1.0);
    let nm = g.affine(mask, -1.0, 1.0);
    let (lp, lnp) = (g.ln(p), g.ln(np));
    let a = g.mul(mask, lp)?;
    let b = g.mul(nm, lnp)?;
    let s = g.add(a, b)?;
    let m = g.mean_all(s);
    Ok(g.scale(m, -1.0))
}

/// Cross-entropy of the mask-branch prediction against the clean mask.
pub fn auxiliary_loss<T: Real>(g: &mut Graph<T>, aux_pred: Var, mask: Var, eps: f64) -> Result<Var> {
    localization_loss(g, aux_pred, mask, eps)
}

/// Graph nodes for the individual terms of one step.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub loc: Var,
    pub su: Var,
    pub mi: Var,
    pub aux: Var,
    pub total: Var,
}

/// Weighted sum in the graph; zero-weight terms get no edge to the total.
pub fn combine<T: Real>(g: &mut Graph<T>, lambdas: &Lambdas, loc: Var, su: Var, mi: Var, aux: Var) -> Result<LossVars> {
    let mut total = loc;
    for (lambda, v) in [(lambdas.su, su), (lambdas.mi, mi), (lambdas.aux, aux)] {
        if lambda != 0.0 {
            let w = g.scale(v, lambda);
            total = g.add(total, w)?;
        }
    }
    Ok(LossVars {
        loc,
        su,
        mi,
        aux,
        total,
    })
}

impl LossVars {
    pub fn bundle<T: Real>(&self, g: &Graph<T>, lambdas: Lambdas) -> LossBundle {
        let v = |x: Var| g.value(x).item().to_f64().unwrap_or(f64::NAN);
        LossBundle::new(v(self.loc), v(self.su), v(self.mi), v(self.aux), lambdas)
    }
}
