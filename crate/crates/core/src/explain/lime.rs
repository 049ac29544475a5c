use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{weighted_ridge, Attribution, Classifier, MethodKind, Output};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LimeConfig {
    pub samples: usize,
    /// Standard deviation of the Gaussian perturbations.
    pub sigma: f64,
    /// Locality kernel width; `None` means `0.75 sqrt(n)`.
    pub kernel_width: Option<f64>,
    pub ridge: f64,
    pub output: Output,
}

impl Default for LimeConfig {
    fn default() -> Self {
        LimeConfig { samples: 100, sigma: 0.25, kernel_width: None, ridge: 1e-3, output: Output::Probability }
    }
}

/// Local linear surrogate: a ridge fit of the model output on Gaussian
/// perturbations of `x`, weighted by `exp(-d^2 / width^2)`. The intercept is
/// not penalized; the scores are the slopes.
pub fn lime_explain(model: &dyn Classifier, x: &[f64], class: usize, cfg: &LimeConfig, seed: u64) -> Result<Attribution> {
    let n = x.len();
    if cfg.samples < n + 2 {
        return Err(Error::InvalidArgument(format!("LIME needs at least {} samples, got {}", n + 2, cfg.samples)));
    }
    let width = cfg.kernel_width.unwrap_or(0.75 * (n as f64).sqrt());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut deltas = Vec::with_capacity(cfg.samples);
    let mut batch = Vec::with_capacity(cfg.samples * n);
    for _ in 0..cfg.samples {
        let d: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                cfg.sigma * z
            })
            .collect();
        batch.extend(x.iter().zip(&d).map(|(a, b)| a + b));
        deltas.push(d);
    }
    let y = cfg.output.eval(model, &Tensor::new(vec![cfg.samples, n], batch)?, class)?;
    let weights: Vec<f64> = deltas.iter().map(|d| (-d.iter().map(|v| v * v).sum::<f64>() / (width * width)).exp()).collect();
    let design: Vec<Vec<f64>> = deltas.iter().map(|d| std::iter::once(1.0).chain(d.iter().copied()).collect()).collect();
    let mut penalized = vec![true; n + 1];
    penalized[0] = false;
    let beta = weighted_ridge(&design, &y, &weights, cfg.ridge, &penalized)?;
    Ok(Attribution::new(beta[1..].to_vec(), class, MethodKind::Lime)?
        .with("samples", cfg.samples as f64)
        .with("sigma", cfg.sigma)
        .with("kernel_width", width)
        .with("ridge", cfg.ridge))
}
