mod common;

use common::{input_grad_errors, model_grad_report, random_tensor};
use forgeloc::objectives::*;
use forgeloc::tensor::{Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;
const EPS: f64 = DEFAULT_PROB_CLAMP_EPS;

fn probs(rng: &mut ChaCha8Rng) -> Tensor<f64> {
    random_tensor([1, 1, 2, 2], 0.05, 0.95, rng)
}

fn mask() -> Tensor<f64> {
    Tensor::from_vec([1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap()
}

#[test]
fn pixel_losses_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        let inputs = [probs(&mut rng), mask()];
        let loc = input_grad_errors(&inputs, &|g, v| localization_loss(g, v[0], v[1], EPS).unwrap());
        let aux = input_grad_errors(&inputs, &|g, v| auxiliary_loss(g, v[0], v[1], EPS).unwrap());
        assert!(loc[0] < TOL && aux[0] < TOL, "{loc:?} {aux:?}");
    }
}

#[test]
fn sufficiency_loss_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for agg in [SuAggregate::Mean, SuAggregate::Max] {
        let inputs: Vec<_> = (0..4).map(|_| probs(&mut rng)).collect();
        let errs = input_grad_errors(&inputs, &|g, v| sufficiency_loss(g, v[0], &v[1..], EPS, agg).unwrap());
        assert!(errs.iter().all(|&e| e < TOL), "{agg:?}: {errs:?}");
    }
}

#[test]
fn minimality_loss_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for mode in [MiKlMode::Categorical, MiKlMode::Gaussian] {
        let inputs = [
            random_tensor([1, 2, 1, 2], -2.0, 2.0, &mut rng),
            random_tensor([1, 2, 1, 2], -2.0, 2.0, &mut rng),
        ];
        let errs = input_grad_errors(&inputs, &|g, v| minimality_loss(g, v[0], v[1], mode).unwrap());
        assert!(errs.iter().all(|&e| e < TOL), "{mode:?}: {errs:?}");
    }
}

fn total_of(g: &mut Graph<f64>, v: &[Var], lambdas: Lambdas) -> Var {
    let loc = localization_loss(g, v[0], v[5], EPS).unwrap();
    let su = sufficiency_loss(g, v[0], &v[1..4], EPS, SuAggregate::Mean).unwrap();
    let aux = auxiliary_loss(g, v[4], v[5], EPS).unwrap();
    let mi = minimality_loss(g, v[6], v[7], MiKlMode::Categorical).unwrap();
    combine(g, &lambdas, loc, su, mi, aux).unwrap().total
}

fn total_inputs(rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    let mut v: Vec<_> = (0..5).map(|_| probs(rng)).collect();
    v.push(mask());
    v.push(random_tensor([1, 2, 1, 2], -1.0, 1.0, rng));
    v.push(random_tensor([1, 2, 1, 2], -1.0, 1.0, rng));
    v
}

#[test]
fn total_loss_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let inputs = total_inputs(&mut rng);
    let errs = input_grad_errors(&inputs, &|g, v| total_of(g, v, Lambdas::default()));
    for (i, e) in errs.iter().enumerate() {
        if i != 5 {
            assert!(*e < TOL, "input {i}: {e}");
        }
    }
}

#[test]
fn zero_weight_removes_the_gradient_of_its_term() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inputs = total_inputs(&mut rng);
    let lambdas = Lambdas { su: 0.0, mi: 0.0, aux: 0.0 };
    let mut g = Graph::new();
    let v: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let total = total_of(&mut g, &v, lambdas);
    let grads = g.backward(total).unwrap();
    // The leave-one-out maps, the auxiliary prediction and both MI inputs
    // only reach the total through disabled terms.
    for i in [1, 2, 3, 4, 6, 7] {
        assert!(grads.get(v[i]).is_none_or(|t| t.data().iter().all(|&x| x == 0.0)), "input {i}");
    }
    assert!(grads.get(v[0]).is_some());
}

#[test]
fn model_losses_and_gamma_match_finite_differences() {
    for (loss, gamma_err, param_err) in model_grad_report(11, 2) {
        assert!(gamma_err < TOL, "{loss}: γ error {gamma_err}");
        assert!(param_err < TOL, "{loss}: parameter error {param_err}");
    }
}
