//! Central-difference gradient verification in 64-bit precision.

use crate::autodiff::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A scalar-valued function of tensors, rebuilt on a fresh tape per call.
pub trait ScalarFn: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>> {}

impl<F> ScalarFn for F where F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>> {}

fn evaluate(f: &impl ScalarFn, inputs: &[Tensor<f64>]) -> Result<f64> {
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let v = out.value();
    if v.numel() != 1 {
        return Err(Error::NonScalarLoss(v.shape().to_vec()));
    }
    Ok(v.item())
}

/// Maximum over all input coordinates of
/// `|analytic - numeric| / max(1, |analytic|)`.
pub fn finite_difference_check(f: impl ScalarFn, inputs: &[Tensor<f64>], eps: f64) -> Result<f64> {
    finite_difference_check_sampled(f, inputs, eps, usize::MAX)
}

/// Like [`finite_difference_check`] but probes at most `max_coords`
/// evenly spaced coordinates of each input, which keeps checks of whole
/// networks affordable.
pub fn finite_difference_check_sampled(
    f: impl ScalarFn,
    inputs: &[Tensor<f64>],
    eps: f64,
    max_coords: usize,
) -> Result<f64> {
    let analytic: Vec<Tensor<f64>> = {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&tape, &vars)?;
        let mut grads = out.backward()?;
        vars.iter()
            .zip(inputs)
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| t.zeros_like()))
            .collect()
    };

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let step = n.div_ceil(max_coords.min(n).max(1));
        for j in (0..n).step_by(step.max(1)) {
            let orig = input.data()[j];
            probe[i].data_mut()[j] = orig + eps;
            let up = evaluate(&f, &probe)?;
            probe[i].data_mut()[j] = orig - eps;
            let down = evaluate(&f, &probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[i].data()[j];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
