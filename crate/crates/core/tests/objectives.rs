use forgeloc::objectives::*;
use forgeloc::tensor::{Graph, Tensor, Var};
use proptest::prelude::*;

const EPS: f64 = DEFAULT_PROB_CLAMP_EPS;

fn map(g: &mut Graph<f64>, v: &[f64]) -> Var {
    g.constant(Tensor::from_vec([1, 1, 1, v.len()], v.to_vec()).unwrap())
}

fn feature(g: &mut Graph<f64>, v: &[f64]) -> Var {
    g.constant(Tensor::from_vec([1, v.len(), 1, 1], v.to_vec()).unwrap())
}

fn value(g: &Graph<f64>, v: Var) -> f64 {
    g.value(v).item()
}

#[test]
fn hand_computed_loss_values() {
    let mut g = Graph::new();
    let p = map(&mut g, &[0.8]);
    let q = map(&mut g, &[0.5]);
    let su = sufficiency_loss(&mut g, p, &[q], EPS, SuAggregate::Mean).unwrap();
    assert!((value(&g, su) - 0.8247).abs() < 1e-4);

    let z = feature(&mut g, &[0.9f64.ln(), 0.1f64.ln()]);
    let e = feature(&mut g, &[0.0, 0.0]);
    let mi = minimality_loss(&mut g, z, e, MiKlMode::Categorical).unwrap();
    assert!((value(&g, mi) - 0.36806).abs() < 1e-5);

    let pred = map(&mut g, &[0.8, 0.4]);
    let m = map(&mut g, &[1.0, 0.0]);
    let loc = localization_loss(&mut g, pred, m, EPS).unwrap();
    let aux = auxiliary_loss(&mut g, pred, m, EPS).unwrap();
    assert!((value(&g, loc) - 0.36699).abs() < 1e-5);
    assert_eq!(value(&g, loc), value(&g, aux));

    assert_eq!(LossBundle::new(1.0, 1.0, 1.0, 1.0, Lambdas::default()).total, 2.2);
}

#[test]
fn two_branch_sufficiency_averages_the_terms() {
    // Branch KLs {0, ln 2}: p = 1 against q = 1 and q = 0.5.
    let mut g = Graph::new();
    let p = map(&mut g, &[1.0]);
    let same = map(&mut g, &[1.0]);
    let half = map(&mut g, &[0.5]);
    let su = sufficiency_loss(&mut g, p, &[same, half], EPS, SuAggregate::Mean).unwrap();
    assert!((value(&g, su) - 0.75).abs() < 1e-5);
}

#[test]
fn degenerate_predictions() {
    let mut g = Graph::new();
    let m = map(&mut g, &[1.0, 0.0, 1.0]);
    let uniform = map(&mut g, &[0.5; 3]);
    let l = localization_loss(&mut g, uniform, m, EPS).unwrap();
    assert!((value(&g, l) - 2f64.ln()).abs() < 1e-12);
    let l = localization_loss(&mut g, m, m, EPS).unwrap();
    assert!(value(&g, l) < 2e-6);
    let z = feature(&mut g, &[0.3, -1.2, 2.0]);
    let mi = minimality_loss(&mut g, z, z, MiKlMode::Categorical).unwrap();
    assert!(value(&g, mi).abs() < 1e-15);
    let short = map(&mut g, &[0.5; 2]);
    assert!(localization_loss(&mut g, short, m, EPS).is_err());
}

#[test]
fn exp_of_negative_kl_is_decreasing() {
    let vals: Vec<f64> = (0..200).map(|i| (-(i as f64) * 0.05).exp()).collect();
    assert!(vals.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn minimality_is_non_negative_on_random_pairs() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
    for _ in 0..1000 {
        let c = rng.random_range(2..5);
        let a: Vec<f64> = (0..c).map(|_| rng.random_range(-4.0..4.0)).collect();
        let b: Vec<f64> = (0..c).map(|_| rng.random_range(-4.0..4.0)).collect();
        let mut g = Graph::new();
        let (z, e) = (feature(&mut g, &a), feature(&mut g, &b));
        for mode in [MiKlMode::Categorical, MiKlMode::Gaussian] {
            let mi = minimality_loss(&mut g, z, e, mode).unwrap();
            assert!(value(&g, mi) >= 0.0);
        }
    }
}

proptest! {
    #[test]
    fn sufficiency_stays_in_unit_interval(
        p in prop::collection::vec(0.0f64..=1.0, 6),
        qs in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 6), 3),
    ) {
        let mut g = Graph::new();
        let pv = map(&mut g, &p);
        let qv: Vec<Var> = qs.iter().map(|q| map(&mut g, q)).collect();
        for agg in [SuAggregate::Mean, SuAggregate::Max] {
            let su = sufficiency_loss(&mut g, pv, &qv, EPS, agg).unwrap();
            let su = value(&g, su);
            prop_assert!(su > 0.0 && su <= 1.0, "{su}");
        }
    }

    #[test]
    fn cross_entropy_is_non_negative(p in prop::collection::vec(0.0f64..=1.0, 5), m in prop::collection::vec(any::<bool>(), 5)) {
        let mut g = Graph::new();
        let pv = map(&mut g, &p);
        let mv = map(&mut g, &m.iter().map(|&b| b as u8 as f64).collect::<Vec<_>>());
        let l = localization_loss(&mut g, pv, mv, EPS).unwrap();
        let l = value(&g, l);
        prop_assert!(l >= 0.0 && l.is_finite());
    }

    #[test]
    fn total_is_the_weighted_sum(
        c in prop::array::uniform4(0.0f64..5.0),
        l in prop::array::uniform3(0.0f64..2.0),
        scale in 0.0f64..4.0,
    ) {
        let lambdas = Lambdas { su: l[0], mi: l[1], aux: l[2] };
        let b = LossBundle::new(c[0], c[1], c[2], c[3], lambdas);
        let want = c[0] + l[0] * c[1] + l[1] * c[2] + l[2] * c[3];
        prop_assert!((b.total - want).abs() < 1e-12);
        let s = LossBundle::new(scale * c[0], scale * c[1], scale * c[2], scale * c[3], lambdas);
        prop_assert!((s.total - scale * b.total).abs() < 1e-9);
    }
}
