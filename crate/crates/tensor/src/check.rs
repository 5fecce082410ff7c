//! Central finite differences for gradient verification.
//!
//! These helpers only ever evaluate the forward function, so they stay
//! independent of the reverse pass they are used to check.

use crate::{Real, Tensor};

/// `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` for each requested flat index `i`
/// (all indices when `indices` is `None`).
pub fn central_difference<T: Real>(
    x: &Tensor<T>,
    mut f: impl FnMut(&Tensor<T>) -> T,
    h: f64,
    indices: Option<&[usize]>,
) -> Vec<f64> {
    let all: Vec<usize>;
    let idx = match indices {
        Some(i) => i,
        None => {
            all = (0..x.numel()).collect();
            &all
        }
    };
    let mut probe = x.clone();
    idx.iter()
        .map(|&i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + T::of(h);
            let plus = f(&probe).to_f64().unwrap_or(f64::NAN);
            probe.data_mut()[i] = orig - T::of(h);
            let minus = f(&probe).to_f64().unwrap_or(f64::NAN);
            probe.data_mut()[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)`, or the absolute difference norm when both
/// vectors are below `floor`.
pub fn relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    if scale < floor {
        diff
    } else {
        diff / scale
    }
}
