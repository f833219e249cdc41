//! Central finite-difference gradients, used as an independent oracle for
//! the analytic backward passes.

use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// `(L(p + h e_i) - L(p - h e_i)) / 2h` for every element of every tensor.
pub fn finite_diff_grad<F>(mut loss_fn: F, params: &[Tensor], h: f64) -> Vec<Tensor>
where
    F: FnMut(&[Tensor]) -> f64,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut work = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut g = Tensor::zeros(params[p].shape());
        for i in 0..params[p].len() {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + h;
            let plus = loss_fn(&work);
            work[p].data_mut()[i] = orig - h;
            let minus = loss_fn(&work);
            work[p].data_mut()[i] = orig;
            g.data_mut()[i] = (plus - minus) / (2.0 * h);
        }
        grads.push(g);
    }
    grads
}

/// Largest `|a - n| / max(|a|, |n|, floor)` over paired gradients.
///
/// The floor keeps elements whose true gradient is ~0 from dominating with
/// pure rounding noise.
pub fn max_relative_error(analytic: &[Tensor], numeric: &[Tensor], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .flat_map(|(a, n)| {
            assert_eq!(a.shape(), n.shape());
            a.data()
                .iter()
                .zip(n.data())
                .map(move |(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        })
        .fold(0.0, f64::max)
}
