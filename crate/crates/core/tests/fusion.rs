use forgeloc::fusion::*;
use forgeloc::params::ParamStore;
use forgeloc::tensor::check::{central_difference, relative_error};
use forgeloc::tensor::{Graph, Tensor, Var};
use proptest::prelude::*;

fn scalar_features(g: &mut Graph<f64>, v: [f64; 3]) -> [Var; 3] {
    v.map(|x| g.constant(Tensor::scalar(x)))
}

fn fused(gamma: f64, v: [f64; 3], drop: Option<usize>) -> forgeloc::Result<f64> {
    let mut store = ParamStore::new();
    let fusion = Fusion::new(&mut store, "fusion");
    fusion.set_gamma(&mut store, gamma);
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let fs = scalar_features(&mut g, v);
    let out = match drop {
        None => fusion.fuse(&mut g, &p, &fs)?,
        Some(i) => fusion.fuse_leave_one_out(&mut g, &p, &fs, i)?,
    };
    Ok(g.value(out).item())
}

#[test]
fn mixing_examples() {
    assert_eq!(fused(1.0, [3.0, -2.0, 7.0], None).unwrap(), -2.0);
    assert_eq!(fused(0.0, [5.0, 100.0, 5.0], None).unwrap(), 5.0);
    assert_eq!(fused(0.5, [2.0, 4.0, 6.0], None).unwrap(), 4.0);
    assert_eq!(fused(0.5, [2.0, 4.0, 6.0], Some(1)).unwrap(), 4.0);
    assert_eq!(fused(0.5, [2.0, 40.0, 6.0], Some(1)).unwrap(), 0.5 * 2.0 + 0.5 * 6.0);
    assert_eq!(fused(1.0, [9.0, 4.0, -9.0], Some(0)).unwrap(), 4.0);
    for i in 0..3 {
        assert_eq!(fused(0.3, [1.5; 3], Some(i)).unwrap(), 1.5);
    }
    assert!(fused(0.5, [1.0; 3], Some(3)).is_err());
}

#[test]
fn new_fusion_starts_near_uniform_and_projects_into_range() {
    let mut store = ParamStore::<f32>::new();
    let fusion = Fusion::new(&mut store, "fusion");
    assert!((fusion.gamma(&store) - GAMMA_INIT).abs() < 1e-7);
    for (set, want) in [(-0.5, GAMMA_EPS), (1.7, 1.0 - GAMMA_EPS), (0.25, 0.25)] {
        fusion.set_gamma(&mut store, set);
        fusion.project(&mut store);
        assert!((fusion.gamma(&store) - want).abs() < 1e-7);
    }
}

#[test]
fn mismatched_shapes_are_rejected() {
    let mut store = ParamStore::<f64>::new();
    let fusion = Fusion::new(&mut store, "fusion");
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let a = g.constant(Tensor::zeros([1, 2, 2, 2]));
    let b = g.constant(Tensor::zeros([1, 2, 2, 3]));
    assert!(fusion.fuse(&mut g, &p, &[a, a, b]).is_err());
}

#[test]
fn gamma_gradient_matches_finite_differences() {
    for gamma in [0.1, 1.0 / 3.0, 0.8] {
        let mut store = ParamStore::<f64>::new();
        let fusion = Fusion::new(&mut store, "fusion");
        let feats = [
            Tensor::from_vec([1, 1, 2, 2], vec![0.3, -1.0, 2.0, 0.5]).unwrap(),
            Tensor::from_vec([1, 1, 2, 2], vec![1.1, 0.2, -0.7, 0.9]).unwrap(),
            Tensor::from_vec([1, 1, 2, 2], vec![-0.4, 0.8, 0.1, 1.6]).unwrap(),
        ];
        let objective = |store: &ParamStore<f64>, drop: Option<usize>| -> (Graph<f64>, Var, Var) {
            let mut g = Graph::new();
            let p = store.bind(&mut g);
            let fs = feats.clone().map(|t| g.constant(t));
            let out = match drop {
                None => fusion.fuse(&mut g, &p, &fs).unwrap(),
                Some(i) => fusion.fuse_leave_one_out(&mut g, &p, &fs, i).unwrap(),
            };
            let sq = g.mul(out, out).unwrap();
            let s = g.sum_all(sq);
            (g, s, p[fusion.gamma_id()])
        };
        for drop in [None, Some(0), Some(1), Some(2)] {
            fusion.set_gamma(&mut store, gamma);
            let (g, s, gv) = objective(&store, drop);
            let analytic = g.backward(s).unwrap().get(gv).map_or(0.0, |t| t.item());
            let numeric = central_difference(
                &Tensor::scalar(gamma),
                |x| {
                    let mut st = store.clone();
                    fusion.set_gamma(&mut st, x.item());
                    let (g, s, _) = objective(&st, drop);
                    g.value(s).item()
                },
                1e-6,
                None,
            );
            let err = relative_error(&[analytic], &numeric, 1e-7);
            assert!(err < 1e-4, "γ {gamma} drop {drop:?}: {analytic} vs {numeric:?}");
        }
    }
}

proptest! {
    #[test]
    fn fused_values_stay_between_the_inputs(gamma in 0.0f64..=1.0, v in prop::array::uniform3(-10.0f64..10.0)) {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let x = fused(gamma, v, None).unwrap();
        prop_assert!(x >= lo - 1e-12 && x <= hi + 1e-12);
        for i in 0..3 {
            if let Ok(y) = fused(gamma, v, Some(i)) {
                prop_assert!(y >= lo - 1e-12 && y <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn coefficients_sum_to_one(gamma in 0.0f64..1.0, drop in 0usize..3) {
        prop_assert!((coefficients(gamma).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let c = leave_one_out_coefficients(gamma, drop).unwrap();
        prop_assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        prop_assert_eq!(c[drop], 0.0);
    }
}
