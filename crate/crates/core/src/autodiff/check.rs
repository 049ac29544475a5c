//! Finite-difference oracles for the reverse-mode engine.

use crate::error::Result;
use crate::tensor::Tensor;

use super::grad::grad;
use super::tape::{Tape, Var};

/// Fourth-order central difference gradient of `f` at `point`.
///
/// Uses the five-point stencil `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`
/// per coordinate.
pub fn numeric_gradient(f: impl Fn(&Tensor) -> Result<f64>, point: &Tensor, step: f64) -> Result<Tensor> {
    let mut probe = point.clone();
    let mut out = Tensor::zeros(point.shape());
    for i in 0..point.len() {
        let x0 = point.data()[i];
        let mut eval = |offset: f64| -> Result<f64> {
            probe.data_mut()[i] = x0 + offset;
            f(&probe)
        };
        let (p2, p1, m1, m2) = (eval(2.0 * step)?, eval(step)?, eval(-step)?, eval(-2.0 * step)?);
        probe.data_mut()[i] = x0;
        out.data_mut()[i] = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * step);
    }
    Ok(out)
}

/// `max_i |a_i - b_i| / max(|a_i|, |b_i|, 1e-8)`.
pub fn max_relative_error(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8)).fold(0.0, f64::max)
}

/// Compares the reverse-mode gradient of a scalar function against central
/// finite differences and returns the maximum relative error.
///
/// `f` builds the function on the supplied tape from its input variable, so
/// the same closure serves both the analytic and the numeric evaluation.
pub fn finite_difference_check<F>(f: F, point: &Tensor, step: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let analytic = {
        let tape = Tape::new();
        let x = tape.var(point.clone());
        let y = f(&tape, x)?;
        grad(&y, &[x], false)?.remove(0).value().as_ref().clone()
    };
    let numeric = numeric_gradient(
        |p| {
            let tape = Tape::new();
            // a variable, so that `f` may differentiate internally
            let x = tape.var(p.clone());
            f(&tape, x)?.value().item()
        },
        point,
        step,
    )?;
    Ok(max_relative_error(&analytic, &numeric))
}
