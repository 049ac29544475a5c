//! Training objective: classification loss, gradient-matching robustness
//! penalty, and autoencoder reconstruction with a sparsity penalty.

use serde::{Deserialize, Serialize};

use crate::autodiff::{batch_jacobian, Tape, Var};
use crate::error::{Error, Result};
use crate::model::{BoundSenn, SennModel};
use crate::nn::softmax_cross_entropy;
use crate::tensor::Tensor;

/// How the residual `grad_x f - theta^T J_x h` is computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobustnessRoute {
    /// Feeds `x` to the concept encoder as a constant and to the parametrizer
    /// as a variable. Since the logits are bilinear in `(theta, h)`, the
    /// gradient with respect to the parametrizer input alone is exactly the
    /// residual, at `m` backward passes.
    #[default]
    Split,
    /// Differentiates the logits and the concepts separately and subtracts,
    /// at `m + k` backward passes (`m` for an identity encoder).
    Direct,
}

/// Logits and the per-example squared Frobenius norm of the residual (`B`).
///
/// With `create_graph` the norms stay differentiable in the model parameters.
pub fn robustness_residual<'t>(
    model: &BoundSenn<'t>,
    x: &Tensor,
    route: RobustnessRoute,
    create_graph: bool,
) -> Result<(Var<'t>, Var<'t>)> {
    let tape = model.tape();
    let b = x.rows();
    let mut sq: Option<Var<'t>> = None;
    let mut accumulate = |r: Var<'t>| -> Result<()> {
        let s = r.square().sum_axis(1, false)?;
        sq = Some(match sq.take() {
            None => s,
            Some(acc) => acc.add(&s)?,
        });
        Ok(())
    };
    let logits = match route {
        RobustnessRoute::Split => {
            let x1 = tape.constant(x.clone());
            let x2 = tape.var(x.clone());
            let logits = model.aggregate(model.concepts(x1)?, model.relevances(x2)?)?;
            for g in batch_jacobian(&logits, &x2, create_graph)? {
                accumulate(g)?;
            }
            logits
        }
        RobustnessRoute::Direct => {
            let xv = tape.var(x.clone());
            let h = model.concepts(xv)?;
            let theta = model.relevances(xv)?;
            let logits = model.aggregate(h, theta)?;
            let jf = batch_jacobian(&logits, &xv, create_graph)?;
            let coef = model.coefficients(theta)?;
            let jh = if model.is_identity() { Vec::new() } else { batch_jacobian(&h, &xv, create_graph)? };
            for (c, gf) in jf.into_iter().enumerate() {
                let coef_c = coef.slice(2, c, 1)?.reshape(&[b, model.k()])?;
                let tj = if model.is_identity() {
                    coef_c
                } else {
                    let mut acc: Option<Var<'t>> = None;
                    for (i, ji) in jh.iter().enumerate() {
                        let term = coef_c.slice(1, i, 1)?.mul(ji)?;
                        acc = Some(match acc {
                            None => term,
                            Some(a) => a.add(&term)?,
                        });
                    }
                    acc.expect("at least one concept")
                };
                accumulate(gf.sub(&tj)?)?;
            }
            logits
        }
    };
    let sq = sq.unwrap_or_else(|| tape.constant(Tensor::zeros(&[b])));
    Ok((logits, sq))
}

/// Batch mean of `||grad_x f(x) - theta(x)^T J_x h(x)||_F`, on the tape.
pub fn robustness_loss<'t>(model: &BoundSenn<'t>, x: &Tensor, route: RobustnessRoute) -> Result<Var<'t>> {
    let (_, sq) = robustness_residual(model, x, route, true)?;
    Ok(sq.sqrt().mean())
}

/// Per-example residual norms, off the tape.
pub fn robustness_norms(model: &SennModel, x: &Tensor, route: RobustnessRoute) -> Result<Vec<f64>> {
    let tape = Tape::new();
    let bound = model.bind(&tape, false);
    let (_, sq) = robustness_residual(&bound, x, route, false)?;
    let norms = sq.value().data().iter().map(|v| v.sqrt()).collect();
    Ok(norms)
}

/// `mean((x - x_hat)^2) + sparsity * mean(|h|)`.
pub fn reconstruction_loss<'t>(x: Var<'t>, x_hat: Var<'t>, concepts: Var<'t>, sparsity: f64) -> Result<Var<'t>> {
    let mse = x.sub(&x_hat)?.square().mean();
    if sparsity == 0.0 {
        return Ok(mse);
    }
    mse.add(&concepts.abs().mean().scale(sparsity))
}

/// Weights of the three loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Objective {
    pub lambda: f64,
    pub xi: f64,
    /// Weight of the L1 concept penalty inside the reconstruction term.
    pub sparsity: f64,
    #[serde(default)]
    pub route: RobustnessRoute,
}

impl Default for Objective {
    fn default() -> Self {
        Objective { lambda: 1e-4, xi: 2e-5, sparsity: 1.0, route: RobustnessRoute::Split }
    }
}

/// Batch-mean values of each loss term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub classification: f64,
    /// Mean squared residual norm; this is the penalized quantity.
    pub robustness: f64,
    /// Mean unsquared residual norm, for reporting.
    pub robustness_norm: f64,
    pub reconstruction: f64,
    pub lambda: f64,
    pub xi: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn new(classification: f64, robustness: f64, robustness_norm: f64, reconstruction: f64, obj: &Objective) -> Self {
        LossBreakdown {
            classification,
            robustness,
            robustness_norm,
            reconstruction,
            lambda: obj.lambda,
            xi: obj.xi,
            total: classification + obj.lambda * robustness + obj.xi * reconstruction,
        }
    }

    /// Row-weighted mean of several breakdowns.
    pub fn weighted_mean(parts: &[(LossBreakdown, usize)]) -> LossBreakdown {
        let n: usize = parts.iter().map(|p| p.1).sum();
        let mut out = LossBreakdown::default();
        if let Some((first, _)) = parts.first() {
            out.lambda = first.lambda;
            out.xi = first.xi;
        }
        for (p, w) in parts {
            let w = *w as f64 / n.max(1) as f64;
            out.classification += w * p.classification;
            out.robustness += w * p.robustness;
            out.robustness_norm += w * p.robustness_norm;
            out.reconstruction += w * p.reconstruction;
        }
        out.total = out.classification + out.lambda * out.robustness + out.xi * out.reconstruction;
        out
    }
}

fn finite(value: f64, term: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(format!("{term} loss")))
    }
}

/// The full objective on one batch. When `with_robustness` is false the
/// robustness term is skipped and reported as zero; `create_graph` keeps it
/// differentiable in the parameters.
pub fn objective<'t>(
    model: &BoundSenn<'t>,
    x: &Tensor,
    y: &[usize],
    obj: &Objective,
    with_robustness: bool,
    create_graph: bool,
) -> Result<(Var<'t>, LossBreakdown)> {
    let tape = model.tape();
    let (logits, sq) = if with_robustness {
        let (l, s) = robustness_residual(model, x, obj.route, create_graph)?;
        (l, Some(s))
    } else {
        (model.logits(tape.constant(x.clone()))?, None)
    };
    let ce = softmax_cross_entropy(logits, y)?;
    let classification = finite(ce.value().item()?, "classification")?;
    let mut total = ce;
    let (mut robustness, mut norm) = (0.0, 0.0);
    if let Some(sq) = sq {
        let mean_sq = sq.mean();
        robustness = finite(mean_sq.value().item()?, "robustness")?;
        norm = sq.value().data().iter().map(|v| v.sqrt()).sum::<f64>() / x.rows().max(1) as f64;
        if obj.lambda != 0.0 {
            total = total.add(&mean_sq.scale(obj.lambda))?;
        }
    }
    let mut reconstruction = 0.0;
    if !model.is_identity() {
        let xc = tape.constant(x.clone());
        let h = model.concepts(xc)?;
        let rec = reconstruction_loss(xc, model.decode(h)?, h, obj.sparsity)?;
        reconstruction = finite(rec.value().item()?, "reconstruction")?;
        if obj.xi != 0.0 {
            total = total.add(&rec.scale(obj.xi))?;
        }
    }
    Ok((total, LossBreakdown::new(classification, robustness, norm, reconstruction, obj)))
}

/// Batch means of every term plus the weighted total.
pub fn total_loss<'t>(model: &BoundSenn<'t>, x: &Tensor, y: &[usize], obj: &Objective) -> Result<(Var<'t>, LossBreakdown)> {
    if obj.lambda < 0.0 || obj.xi < 0.0 {
        return Err(Error::InvalidArgument("loss weights must be nonnegative".into()));
    }
    objective(model, x, y, obj, true, true)
}
