use super::{row, Attribution, GradientClassifier, MethodKind};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `|d logit_c / dx|`.
pub fn saliency(model: &dyn GradientClassifier, x: &[f64], class: usize) -> Result<Attribution> {
    let g = model.logit_gradient(&row(x)?, class)?;
    Attribution::new(g.data().iter().map(|v| v.abs()).collect(), class, MethodKind::Saliency)
}

/// `(d logit_c / dx) * x`.
pub fn grad_times_input(model: &dyn GradientClassifier, x: &[f64], class: usize) -> Result<Attribution> {
    let g = model.logit_gradient(&row(x)?, class)?;
    Attribution::new(g.data().iter().zip(x).map(|(g, x)| g * x).collect(), class, MethodKind::GradInput)
}

/// `(x - x_bar) * mean_j grad(x_bar + (j + 1/2)/M (x - x_bar))`, a midpoint
/// Riemann sum of the path integral with `steps` nodes.
pub fn integrated_gradients(
    model: &dyn GradientClassifier,
    x: &[f64],
    baseline: &[f64],
    steps: usize,
    class: usize,
) -> Result<Attribution> {
    if steps == 0 {
        return Err(Error::InvalidArgument("integrated gradients needs at least one step".into()));
    }
    if baseline.len() != x.len() {
        return Err(Error::ShapeMismatch { op: "integrated_gradients", lhs: vec![x.len()], rhs: vec![baseline.len()] });
    }
    let n = x.len();
    let mut path = Vec::with_capacity(steps * n);
    for j in 0..steps {
        let a = (j as f64 + 0.5) / steps as f64;
        path.extend(x.iter().zip(baseline).map(|(xi, bi)| bi + a * (xi - bi)));
    }
    let g = model.logit_gradient(&Tensor::new(vec![steps, n], path)?, class)?;
    let mut avg = vec![0.0; n];
    for r in 0..steps {
        for (a, v) in avg.iter_mut().zip(g.row(r)) {
            *a += v;
        }
    }
    let scores = avg.iter().zip(x.iter().zip(baseline)).map(|(a, (xi, bi))| a / steps as f64 * (xi - bi)).collect();
    Ok(Attribution::new(scores, class, MethodKind::IntegratedGradients)?.with("steps", steps as f64))
}
