//! Helpers shared by several test binaries.
#![allow(dead_code)]

pub mod metric_oracles;

use forgeloc::model::TrainOutputs;
use forgeloc::objectives::LossVars;
use forgeloc::params::ParamStore;
use forgeloc::reasoning::{inject_mask_noise, ReasoningConfig};
use forgeloc::tensor::check::{central_difference, relative_error};
use forgeloc::tensor::{Graph, Tensor, Var};
use forgeloc::{ForgeryMask, ForgeryModel, ModelConfig, ObjectiveConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-6;
pub const FLOOR: f64 = 1e-7;

pub fn random_tensor(shape: [usize; 4], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Relative error of the reverse-mode gradient of `f` with respect to each
/// input, against central differences.
pub fn input_grad_errors(inputs: &[Tensor<f64>], f: &dyn Fn(&mut Graph<f64>, &[Var]) -> Var) -> Vec<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars);
    let grads = g.backward(out).unwrap();
    (0..inputs.len())
        .map(|i| {
            let analytic: Vec<f64> = match grads.get(vars[i]) {
                Some(t) => t.data().to_vec(),
                None => vec![0.0; inputs[i].numel()],
            };
            let numeric = central_difference(
                &inputs[i],
                |x| {
                    let mut g = Graph::new();
                    let vars: Vec<Var> = inputs
                        .iter()
                        .enumerate()
                        .map(|(j, t)| g.constant(if j == i { x.clone() } else { t.clone() }))
                        .collect();
                    let out = f(&mut g, &vars);
                    g.value(out).item()
                },
                STEP,
                None,
            );
            relative_error(&analytic, &numeric, FLOOR)
        })
        .collect()
}

pub fn toy_model_config() -> ModelConfig {
    ModelConfig {
        backbone_depth: 2,
        backbone_blocks: 1,
        base_channels: 4,
        reasoning: ReasoningConfig {
            depth: 2,
            blocks_per_scale: 1,
        },
    }
}

pub struct ToyProblem {
    pub model: ForgeryModel,
    pub store: ParamStore<f64>,
    pub images: Tensor<f64>,
    pub masks: Tensor<f64>,
    pub noisy: Tensor<f64>,
    pub objective: ObjectiveConfig,
}

/// One 8×8 image with a random mask and a noisy copy of it. Biases are
/// randomised so that no ReLU input sits exactly on its kink.
pub fn toy_problem(seed: u64) -> ToyProblem {
    let (model, mut store) = ForgeryModel::init::<f64>(toy_model_config(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for i in 0..store.len() {
        if store.names()[i].ends_with(".bias") {
            let shape = store.values()[i].shape();
            store.values_mut()[i] = random_tensor(shape, -0.1, 0.1, &mut rng);
        }
    }
    let images = random_tensor([1, 3, 8, 8], 0.0, 1.0, &mut rng);
    let mut mask = ForgeryMask::zeros(8, 8);
    for y in 2..6 {
        for x in 1..5 {
            mask.set(y, x, rng.random_bool(0.8));
        }
    }
    let noisy = inject_mask_noise(&mask, 0.1, seed).unwrap().mask;
    ToyProblem {
        model,
        store,
        images,
        masks: mask.to_tensor(),
        noisy: noisy.to_tensor(),
        objective: ObjectiveConfig::default(),
    }
}

impl ToyProblem {
    fn forward(&self, g: &mut Graph<f64>, store: &ParamStore<f64>) -> (TrainOutputs, Vec<Var>) {
        let p = store.bind(g);
        let x = g.constant(self.images.clone());
        let m = g.constant(self.masks.clone());
        let n = g.constant(self.noisy.clone());
        let out = self.model.forward_train(g, &p, x, n, m, &self.objective).unwrap();
        (out, p.vars().to_vec())
    }

    pub fn param_index(&self, name: &str) -> usize {
        self.store.names().iter().position(|n| n == name).unwrap()
    }

    /// Relative error of d(loss)/d(param) over the chosen flat indices.
    pub fn param_grad_error(&self, pick: fn(&LossVars) -> Var, param: usize, indices: &[usize]) -> f64 {
        let mut g = Graph::new();
        let (out, vars) = self.forward(&mut g, &self.store);
        let grads = g.backward(pick(&out.losses)).unwrap();
        let analytic: Vec<f64> = indices
            .iter()
            .map(|&i| grads.get(vars[param]).map_or(0.0, |t| t.data()[i]))
            .collect();
        let base = self.store.values()[param].clone();
        let numeric = central_difference(
            &base,
            |x| {
                let mut s = self.store.clone();
                s.values_mut()[param] = x.clone();
                let mut g = Graph::new();
                let (out, _) = self.forward(&mut g, &s);
                g.value(pick(&out.losses)).item()
            },
            STEP,
            Some(indices),
        );
        relative_error(&analytic, &numeric, FLOOR)
    }
}

pub const LOSSES: [(&str, fn(&LossVars) -> Var); 5] = [
    ("loc", |l| l.loc),
    ("su", |l| l.su),
    ("mi", |l| l.mi),
    ("aux", |l| l.aux),
    ("total", |l| l.total),
];

/// Worst relative error per loss over γ and a sample of coordinates from
/// every parameter tensor of the toy model.
pub fn model_grad_report(seed: u64, per_tensor: usize) -> Vec<(&'static str, f64, f64)> {
    let toy = toy_problem(seed);
    let gamma = toy.param_index("fusion.gamma");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<(usize, Vec<usize>)> = (0..toy.store.len())
        .filter(|&i| i != gamma)
        .map(|i| {
            let n = toy.store.values()[i].numel();
            (i, (0..per_tensor.min(n)).map(|_| rng.random_range(0..n)).collect())
        })
        .collect();
    LOSSES
        .iter()
        .map(|&(name, pick)| {
            let g_err = toy.param_grad_error(pick, gamma, &[0]);
            let worst = picks
                .iter()
                .map(|(i, idx)| toy.param_grad_error(pick, *i, idx))
                .fold(0.0f64, f64::max);
            (name, g_err, worst)
        })
        .collect()
}
