//! Exact information-theoretic quantities on small discrete joints.
//!
//! Variable 0 of a [`DiscreteJoint`] is the label `M`; variables `1..=n` are
//! the features `f₁…f_n`. Logs are natural and `0·log 0 = 0`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const SUM_TOL: f64 = 1e-12;
pub const IDENTITY_TOL: f64 = 1e-9;

/// Dense pmf over a product of finite alphabets, last variable fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteJoint {
    sizes: Vec<usize>,
    pmf: Vec<f64>,
}

fn check_table(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidArgument(format!("{what} has negative or non-finite entries")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > SUM_TOL {
        return Err(Error::InvalidArgument(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

/// Normalised symmetric Dirichlet(1) draw.
fn dirichlet(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

fn xlogy_ratio(p: f64, num: f64, den: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * (num / den).ln()
    }
}

impl DiscreteJoint {
    pub fn new(sizes: Vec<usize>, pmf: Vec<f64>) -> Result<Self> {
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(Error::InvalidArgument("alphabet sizes must be non-empty and positive".into()));
        }
        let n: usize = sizes.iter().product();
        if pmf.len() != n {
            return Err(Error::InvalidArgument(format!("table needs {n} entries, got {}", pmf.len())));
        }
        check_table(&pmf, "joint")?;
        Ok(Self { sizes, pmf })
    }

    /// Table proportional to `weight(outcome)`.
    pub fn from_fn(sizes: Vec<usize>, weight: impl Fn(&[usize]) -> f64) -> Result<Self> {
        let n: usize = sizes.iter().product();
        let mut pmf = Vec::with_capacity(n);
        let mut idx = vec![0; sizes.len()];
        for flat in 0..n {
            decode(flat, &sizes, &mut idx);
            pmf.push(weight(&idx));
        }
        let s: f64 = pmf.iter().sum();
        if !(s > 0.0) {
            return Err(Error::InvalidArgument("weights sum to zero".into()));
        }
        pmf.iter_mut().for_each(|v| *v /= s);
        Self::new(sizes, pmf)
    }

    /// Symmetric Dirichlet(1) over the whole table.
    pub fn random(sizes: Vec<usize>, rng: &mut impl Rng) -> Result<Self> {
        let n = sizes.iter().product();
        let mut pmf = dirichlet(n, rng);
        let s: f64 = pmf.iter().sum();
        pmf.iter_mut().for_each(|v| *v /= s);
        Self::new(sizes, pmf)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn num_vars(&self) -> usize {
        self.sizes.len()
    }

    pub fn num_features(&self) -> usize {
        self.sizes.len() - 1
    }

    fn check_vars(&self, sets: &[&[usize]]) -> Result<()> {
        let mut seen = vec![false; self.sizes.len()];
        for set in sets {
            for &v in *set {
                if v >= self.sizes.len() {
                    return Err(Error::InvalidArgument(format!("variable {v} does not exist")));
                }
                if seen[v] {
                    return Err(Error::InvalidArgument(format!("variable {v} appears in more than one set")));
                }
                seen[v] = true;
            }
        }
        Ok(())
    }

    /// Flat index into the marginal over `vars` for a full outcome.
    fn sub_index(&self, idx: &[usize], vars: &[usize]) -> usize {
        vars.iter().fold(0, |acc, &v| acc * self.sizes[v] + idx[v])
    }

    /// Marginal table over `vars`, in the order given.
    pub fn marginal(&self, vars: &[usize]) -> Vec<f64> {
        let n: usize = vars.iter().map(|&v| self.sizes[v]).product();
        let mut out = vec![0.0; n];
        let mut idx = vec![0; self.sizes.len()];
        for (flat, &p) in self.pmf.iter().enumerate() {
            decode(flat, &self.sizes, &mut idx);
            out[self.sub_index(&idx, vars)] += p;
        }
        out
    }

    pub fn entropy(&self, vars: &[usize]) -> Result<f64> {
        self.check_vars(&[vars])?;
        Ok(self
            .marginal(vars)
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum())
    }

    /// Sum over full outcomes of `f(p, idx)`.
    fn expect(&self, mut f: impl FnMut(f64, &[usize]) -> f64) -> f64 {
        let mut idx = vec![0; self.sizes.len()];
        let mut acc = 0.0;
        for (flat, &p) in self.pmf.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            decode(flat, &self.sizes, &mut idx);
            acc += f(p, &idx);
        }
        acc
    }

    pub fn features_except(&self, i: usize) -> Vec<usize> {
        (1..self.sizes.len()).filter(|&v| v != i).collect()
    }
}

fn decode(mut flat: usize, sizes: &[usize], idx: &mut [usize]) {
    for k in (0..sizes.len()).rev() {
        idx[k] = flat % sizes[k];
        flat /= sizes[k];
    }
}

fn union(a: &[usize], b: &[usize]) -> Vec<usize> {
    a.iter().chain(b).copied().collect()
}

/// `I(A;B) = Σ p(a,b) log(p(a,b) / (p(a)p(b)))`.
pub fn mutual_information(j: &DiscreteJoint, a: &[usize], b: &[usize]) -> Result<f64> {
    conditional_mutual_information(j, a, b, &[])
}

/// `I(A;B|C) = Σ p(a,b,c) log(p(c)·p(a,b,c) / (p(a,c)·p(b,c)))`.
pub fn conditional_mutual_information(j: &DiscreteJoint, a: &[usize], b: &[usize], c: &[usize]) -> Result<f64> {
    j.check_vars(&[a, b, c])?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("mutual information needs non-empty sets".into()));
    }
    let abc = union(&union(a, b), c);
    let (ac, bc) = (union(a, c), union(b, c));
    let (p_abc, p_ac, p_bc, p_c) = (j.marginal(&abc), j.marginal(&ac), j.marginal(&bc), j.marginal(c));
    let mut seen = vec![false; p_abc.len()];
    Ok(j.expect(|_, idx| {
        let k = j.sub_index(idx, &abc);
        if std::mem::replace(&mut seen[k], true) {
            return 0.0;
        }
        let pc = p_c[j.sub_index(idx, c)];
        xlogy_ratio(p_abc[k], pc * p_abc[k], p_ac[j.sub_index(idx, &ac)] * p_bc[j.sub_index(idx, &bc)])
    }))
}

/// `E_c[KL(p(a,b|c) ‖ p(a|c)p(b|c))]`, an independent route to `I(A;B|C)`.
pub fn conditional_mi_kl_form(j: &DiscreteJoint, a: &[usize], b: &[usize], c: &[usize]) -> Result<f64> {
    j.check_vars(&[a, b, c])?;
    let (na, nb) = (
        a.iter().map(|&v| j.sizes[v]).product::<usize>(),
        b.iter().map(|&v| j.sizes[v]).product::<usize>(),
    );
    let abc = union(&union(a, b), c);
    let p_abc = j.marginal(&abc);
    let nc = p_abc.len() / (na * nb);
    let mut total = 0.0;
    for ci in 0..nc {
        let at = |ai: usize, bi: usize| p_abc[(ai * nb + bi) * nc + ci];
        let pc: f64 = (0..na).flat_map(|ai| (0..nb).map(move |bi| (ai, bi))).map(|(x, y)| at(x, y)).sum();
        if pc == 0.0 {
            continue;
        }
        let mut kl = 0.0;
        for ai in 0..na {
            let pa: f64 = (0..nb).map(|bi| at(ai, bi)).sum::<f64>() / pc;
            for bi in 0..nb {
                let pb: f64 = (0..na).map(|x| at(x, bi)).sum::<f64>() / pc;
                kl += xlogy_ratio(at(ai, bi) / pc, at(ai, bi) / pc, pa * pb);
            }
        }
        total += pc * kl;
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainRuleReport {
    /// `I(M; f₁,…,f_n)`.
    pub total: f64,
    /// `I(fᵢ; M | f₁,…,f_{i−1})` for each `i`.
    pub chain_terms: Vec<f64>,
    pub deviation: f64,
    pub identity_holds: bool,
    /// `Σᵢ I(fᵢ; M | F∖fᵢ)`.
    pub leave_one_out_sum: f64,
    /// Whether `Σ chain terms ≤ Σ leave-one-out terms`; reported, never asserted.
    pub inequality_holds: bool,
}

pub fn check_chain_rule(j: &DiscreteJoint) -> Result<ChainRuleReport> {
    let n = j.num_features();
    if n < 2 {
        return Err(Error::InvalidArgument("chain rule check needs at least two features".into()));
    }
    let all: Vec<usize> = (1..=n).collect();
    let total = mutual_information(j, &[0], &all)?;
    let chain_terms = (1..=n)
        .map(|i| conditional_mutual_information(j, &[i], &[0], &all[..i - 1]))
        .collect::<Result<Vec<_>>>()?;
    let deviation = (chain_terms.iter().sum::<f64>() - total).abs();
    let leave_one_out_sum = (1..=n)
        .map(|i| conditional_mutual_information(j, &[i], &[0], &j.features_except(i)))
        .sum::<Result<f64>>()?;
    Ok(ChainRuleReport {
        total,
        chain_terms,
        deviation,
        identity_holds: deviation <= IDENTITY_TOL,
        leave_one_out_sum,
        inequality_holds: total <= leave_one_out_sum + IDENTITY_TOL,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LooTerm {
    /// `I(fᵢ; M | F∖fᵢ)`.
    pub cmi: f64,
    /// `E_F[KL(p(M|F) ‖ p(M|F∖fᵢ))]`.
    pub expected_kl: f64,
    pub deviation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LooReport {
    pub terms: Vec<LooTerm>,
    pub max_deviation: f64,
    pub identity_holds: bool,
}

/// `p(M | vars)` as a table over `[vars…, M]`.
fn posterior(j: &DiscreteJoint, vars: &[usize]) -> Vec<f64> {
    let with_m = union(vars, &[0]);
    let joint = j.marginal(&with_m);
    let nm = j.sizes[0];
    let mut out = joint.clone();
    for chunk in out.chunks_mut(nm) {
        let s: f64 = chunk.iter().sum();
        if s > 0.0 {
            chunk.iter_mut().for_each(|v| *v /= s);
        }
    }
    out
}

/// `E_F[KL(p(M|F) ‖ r(M|F∖fᵢ))]` where `r` is a table over `[F∖fᵢ…, M]`.
pub fn expected_loo_kl(j: &DiscreteJoint, i: usize, r: &[f64]) -> Result<f64> {
    if i == 0 || i > j.num_features() {
        return Err(Error::InvalidArgument(format!("feature index {i} outside 1..={}", j.num_features())));
    }
    let all: Vec<usize> = (1..=j.num_features()).collect();
    let rest = j.features_except(i);
    let p_full = posterior(j, &all);
    let p_f = j.marginal(&all);
    let nm = j.sizes[0];
    let mut seen = vec![false; p_f.len()];
    Ok(j.expect(|_, idx| {
        let kf = j.sub_index(idx, &all);
        if std::mem::replace(&mut seen[kf], true) {
            return 0.0;
        }
        let kr = j.sub_index(idx, &rest);
        let kl: f64 = (0..nm)
            .map(|m| xlogy_ratio(p_full[kf * nm + m], p_full[kf * nm + m], r[kr * nm + m]))
            .sum();
        p_f[kf] * kl
    }))
}

pub fn check_loo_identity(j: &DiscreteJoint) -> Result<LooReport> {
    let n = j.num_features();
    if n < 2 {
        return Err(Error::InvalidArgument("leave-one-out check needs at least two features".into()));
    }
    let mut terms = Vec::with_capacity(n);
    for i in 1..=n {
        let rest = j.features_except(i);
        let cmi = conditional_mutual_information(j, &[i], &[0], &rest)?;
        let expected_kl = expected_loo_kl(j, i, &posterior(j, &rest))?;
        terms.push(LooTerm {
            cmi,
            expected_kl,
            deviation: (cmi - expected_kl).abs(),
        });
    }
    let max_deviation = terms.iter().map(|t| t.deviation).fold(0.0, f64::max);
    Ok(LooReport {
        terms,
        max_deviation,
        identity_holds: max_deviation <= IDENTITY_TOL,
    })
}

/// Gap `E_F KL(p(M|F) ‖ r) − I(fᵢ;M|F∖fᵢ)` for a random perturbation `r` of
/// the exact posterior `p(M|F∖fᵢ)`; never negative in exact arithmetic.
pub fn perturbed_loo_gap(j: &DiscreteJoint, i: usize, strength: f64, rng: &mut impl Rng) -> Result<f64> {
    let rest = j.features_except(i);
    let mut r = posterior(j, &rest);
    let nm = j.sizes[0];
    for row in r.chunks_mut(nm) {
        let noise = dirichlet(nm, rng);
        for (v, e) in row.iter_mut().zip(noise) {
            *v = (1.0 - strength) * *v + strength * e;
        }
    }
    let cmi = conditional_mutual_information(j, &[i], &[0], &rest)?;
    Ok(expected_loo_kl(j, i, &r)? - cmi)
}

/// Joint `p(f, m)` with encoder `p(z|f)` and variational tables `q(m|z)`,
/// `q(z|m)`. All tables are row-major with the conditioning variable first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CebInstance {
    pub nf: usize,
    pub nm: usize,
    pub nz: usize,
    pub p_fm: Vec<f64>,
    pub p_z_given_f: Vec<f64>,
    pub q_m_given_z: Vec<f64>,
    pub q_z_given_m: Vec<f64>,
    pub beta: f64,
}

fn check_rows(t: &[f64], rows: usize, cols: usize, what: &str) -> Result<()> {
    if t.len() != rows * cols {
        return Err(Error::InvalidArgument(format!("{what} needs {} entries", rows * cols)));
    }
    for (r, row) in t.chunks(cols).enumerate() {
        check_table(row, &format!("{what} row {r}"))?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CebReport {
    /// `I(Z;M) − β·I(F;Z|M)`.
    pub left: f64,
    /// `E[log q(m|z) − β·log(p(z|f)/q(z|m))]`.
    pub right: f64,
    /// `H(M)`, the constant separating the two sides at the true conditionals.
    pub entropy_m: f64,
    /// `left − right`.
    pub gap: f64,
    /// `left − (right + H(M))`.
    pub tight_gap: f64,
    pub bound_holds: bool,
    pub tight_bound_holds: bool,
}

impl CebInstance {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("β must be finite and ≥ 0, got {}", self.beta)));
        }
        if self.p_fm.len() != self.nf * self.nm {
            return Err(Error::InvalidArgument("p(f,m) has the wrong size".into()));
        }
        check_table(&self.p_fm, "p(f,m)")?;
        check_rows(&self.p_z_given_f, self.nf, self.nz, "p(z|f)")?;
        check_rows(&self.q_m_given_z, self.nz, self.nm, "q(m|z)")?;
        check_rows(&self.q_z_given_m, self.nm, self.nz, "q(z|m)")
    }

    /// Random joint, encoder and variational tables.
    pub fn random(nf: usize, nm: usize, nz: usize, beta: f64, rng: &mut impl Rng) -> Self {
        let rows = |r: usize, c: usize, rng: &mut dyn rand::RngCore| -> Vec<f64> {
            let mut rng = rng;
            (0..r).flat_map(|_| dirichlet(c, &mut rng)).collect()
        };
        Self {
            nf,
            nm,
            nz,
            p_fm: dirichlet(nf * nm, rng),
            p_z_given_f: rows(nf, nz, rng),
            q_m_given_z: rows(nz, nm, rng),
            q_z_given_m: rows(nm, nz, rng),
            beta,
        }
    }

    /// Joint `p(f, m, z) = p(f, m)·p(z|f)`.
    fn joint(&self, f: usize, m: usize, z: usize) -> f64 {
        self.p_fm[f * self.nm + m] * self.p_z_given_f[f * self.nz + z]
    }

    /// The same instance with both variational tables set to the true
    /// conditionals `p(m|z)` and `p(z|m)`.
    pub fn with_true_conditionals(&self) -> Self {
        let mut out = self.clone();
        let mut p_zm = vec![0.0; self.nz * self.nm];
        for f in 0..self.nf {
            for m in 0..self.nm {
                for z in 0..self.nz {
                    p_zm[z * self.nm + m] += self.joint(f, m, z);
                }
            }
        }
        for z in 0..self.nz {
            let pz: f64 = (0..self.nm).map(|m| p_zm[z * self.nm + m]).sum();
            for m in 0..self.nm {
                out.q_m_given_z[z * self.nm + m] = if pz > 0.0 { p_zm[z * self.nm + m] / pz } else { 1.0 / self.nm as f64 };
            }
        }
        for m in 0..self.nm {
            let pm: f64 = (0..self.nz).map(|z| p_zm[z * self.nm + m]).sum();
            for z in 0..self.nz {
                out.q_z_given_m[m * self.nz + z] = if pm > 0.0 { p_zm[z * self.nm + m] / pm } else { 1.0 / self.nz as f64 };
            }
        }
        out
    }

    fn as_joint(&self) -> DiscreteJoint {
        let mut pmf = Vec::with_capacity(self.nm * self.nf * self.nz);
        for m in 0..self.nm {
            for f in 0..self.nf {
                for z in 0..self.nz {
                    pmf.push(self.joint(f, m, z));
                }
            }
        }
        DiscreteJoint {
            sizes: vec![self.nm, self.nf, self.nz],
            pmf,
        }
    }
}

/// Enumerates both sides of the variational bound exactly.
pub fn check_ceb_bound(inst: &CebInstance) -> Result<CebReport> {
    inst.validate()?;
    let j = inst.as_joint();
    let (m, f, z) = (0, 1, 2);
    let left = mutual_information(&j, &[z], &[m])? - inst.beta * conditional_mutual_information(&j, &[f], &[z], &[m])?;
    let mut right = 0.0;
    for fi in 0..inst.nf {
        for mi in 0..inst.nm {
            for zi in 0..inst.nz {
                let p = inst.joint(fi, mi, zi);
                if p == 0.0 {
                    continue;
                }
                let qm = inst.q_m_given_z[zi * inst.nm + mi];
                let pz = inst.p_z_given_f[fi * inst.nz + zi];
                let qz = inst.q_z_given_m[mi * inst.nz + zi];
                right += p * (qm.ln() - inst.beta * (pz / qz).ln());
            }
        }
    }
    let entropy_m = j.entropy(&[m])?;
    let gap = left - right;
    let tight_gap = gap - entropy_m;
    Ok(CebReport {
        left,
        right,
        entropy_m,
        gap,
        tight_gap,
        bound_holds: gap >= -IDENTITY_TOL,
        tight_bound_holds: tight_gap >= -IDENTITY_TOL,
    })
}

/// Alphabet sizes for sweep draws: `M` and each feature take 2..=4 symbols.
pub fn random_sizes(n_features: usize, rng: &mut impl Rng) -> Vec<usize> {
    (0..=n_features).map(|_| rng.random_range(2..=4)).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Counterexample {
    pub joint: DiscreteJoint,
    pub chain_sum: f64,
    pub leave_one_out_sum: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckSummary {
    pub name: String,
    pub instances: usize,
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InequalityProbe {
    pub instances: usize,
    pub satisfied: usize,
    pub rate: f64,
    pub counterexamples: Vec<Counterexample>,
}

/// Full sweep behind the `theory-check` command.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TheoryReport {
    pub seed: u64,
    pub checks: Vec<CheckSummary>,
    pub chain_inequality: InequalityProbe,
    pub passed: bool,
}

fn summary(name: &str, instances: usize, worst: f64, tolerance: f64, passed: bool) -> CheckSummary {
    CheckSummary {
        name: name.into(),
        instances,
        worst,
        tolerance,
        passed,
    }
}

/// Runs every identity over `count` seeded random instances each.
pub fn run_theory_checks(count: usize, seed: u64, max_counterexamples: usize) -> Result<TheoryReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut chain_worst, mut loo_worst, mut kl_form_worst, mut perturb_worst) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut nonneg_worst = 0.0f64;
    let mut probe = InequalityProbe {
        instances: 0,
        satisfied: 0,
        rate: 0.0,
        counterexamples: Vec::new(),
    };
    for _ in 0..count {
        let n = rng.random_range(2..=3);
        let sizes = random_sizes(n, &mut rng);
        let j = DiscreteJoint::random(sizes, &mut rng)?;
        let chain = check_chain_rule(&j)?;
        chain_worst = chain_worst.max(chain.deviation);
        probe.instances += 1;
        if chain.inequality_holds {
            probe.satisfied += 1;
        } else if probe.counterexamples.len() < max_counterexamples {
            probe.counterexamples.push(Counterexample {
                joint: j.clone(),
                chain_sum: chain.total,
                leave_one_out_sum: chain.leave_one_out_sum,
            });
        }
        let loo = check_loo_identity(&j)?;
        loo_worst = loo_worst.max(loo.max_deviation);
        for t in &loo.terms {
            nonneg_worst = nonneg_worst.max(-t.cmi).max(-t.expected_kl);
        }
        let rest = j.features_except(1);
        let a = conditional_mutual_information(&j, &[1], &[0], &rest)?;
        let b = conditional_mi_kl_form(&j, &[1], &[0], &rest)?;
        kl_form_worst = kl_form_worst.max((a - b).abs());
        let i = rng.random_range(1..=n);
        let strength = rng.random_range(0.01..0.5);
        perturb_worst = perturb_worst.max(-perturbed_loo_gap(&j, i, strength, &mut rng)?);
    }
    probe.rate = probe.satisfied as f64 / probe.instances.max(1) as f64;

    let (mut ceb_worst, mut tight_worst, mut eq_worst) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..count {
        let (nf, nm, nz) = (
            rng.random_range(2..=4),
            rng.random_range(2..=4),
            rng.random_range(2..=4),
        );
        let beta = if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..4.0) };
        let inst = CebInstance::random(nf, nm, nz, beta, &mut rng);
        let r = check_ceb_bound(&inst)?;
        ceb_worst = ceb_worst.max(-r.gap);
        tight_worst = tight_worst.max(-r.tight_gap);
        let exact = check_ceb_bound(&inst.with_true_conditionals())?;
        eq_worst = eq_worst.max(exact.tight_gap.abs());
    }

    let checks = vec![
        summary("chain_rule_identity", count, chain_worst, IDENTITY_TOL, chain_worst <= IDENTITY_TOL),
        summary("loo_cmi_kl_identity", count, loo_worst, IDENTITY_TOL, loo_worst <= IDENTITY_TOL),
        summary("cmi_kl_form", count, kl_form_worst, IDENTITY_TOL, kl_form_worst <= IDENTITY_TOL),
        summary("perturbed_loo_kl_dominates", count, perturb_worst, IDENTITY_TOL, perturb_worst <= IDENTITY_TOL),
        summary("information_non_negative", count, nonneg_worst, SUM_TOL, nonneg_worst <= SUM_TOL),
        summary("ceb_bound", count, ceb_worst, IDENTITY_TOL, ceb_worst <= IDENTITY_TOL),
        summary("ceb_bound_with_label_entropy", count, tight_worst, IDENTITY_TOL, tight_worst <= IDENTITY_TOL),
        summary("ceb_equality_at_true_conditionals", count, eq_worst, IDENTITY_TOL, eq_worst <= IDENTITY_TOL),
    ];
    let passed = checks.iter().all(|c| c.passed);
    Ok(TheoryReport {
        seed,
        checks,
        chain_inequality: probe,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlapping_sets_are_rejected() {
        let j = DiscreteJoint::from_fn(vec![2, 2], |_| 1.0).unwrap();
        assert!(mutual_information(&j, &[0], &[0]).is_err());
        assert!(conditional_mutual_information(&j, &[0], &[1], &[1]).is_err());
        assert!(mutual_information(&j, &[0], &[5]).is_err());
    }

    #[test]
    fn invalid_tables_are_rejected() {
        assert!(DiscreteJoint::new(vec![2], vec![0.5, 0.6]).is_err());
        assert!(DiscreteJoint::new(vec![2], vec![1.5, -0.5]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut inst = CebInstance::random(2, 2, 2, 1.0, &mut rng);
        inst.q_m_given_z[0] += 0.1;
        assert!(check_ceb_bound(&inst).is_err());
    }
}
