use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_values, Tape};
use crate::error::{Error, Result};
use crate::explain::{attribute, row, Classifier, GradientClassifier, MethodKind, MethodSettings};
use crate::model::SennModel;
use crate::tensor::Tensor;

/// Denominators below this make the ratio undefined.
const MIN_DENOMINATOR: f64 = 1e-12;

/// The explanation map whose local variation is measured.
pub trait Explainer: Sync {
    /// `f_expl(x)`; `seed` feeds sampling explainers and is ignored otherwise.
    fn explain(&self, x: &[f64], seed: u64) -> Result<Vec<f64>>;

    /// Where the denominator of the ratio is measured: the inputs themselves
    /// unless the explanation is over learned concepts.
    fn represent(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(x.to_vec())
    }
}

/// `theta(x)` over the concepts `h(x)`.
pub struct SennExplainer<'a> {
    pub model: &'a SennModel,
}

impl Explainer for SennExplainer<'_> {
    fn explain(&self, x: &[f64], _seed: u64) -> Result<Vec<f64>> {
        Ok(self.model.relevances(&row(x)?)?.into_data())
    }

    fn represent(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.model.encode_concepts(&row(x)?)?.into_data())
    }
}

/// A post-hoc attribution method explaining a fixed class.
pub struct AttributionExplainer<'a> {
    pub model: &'a dyn GradientClassifier,
    pub method: MethodKind,
    pub settings: MethodSettings,
    pub class: usize,
}

impl<'a> AttributionExplainer<'a> {
    /// Explains the class predicted at `x` wherever it is evaluated.
    pub fn for_point(model: &'a dyn GradientClassifier, method: MethodKind, settings: MethodSettings, x: &[f64]) -> Result<Self> {
        let class = model.predict_class(x)?;
        Ok(AttributionExplainer { model, method, settings, class })
    }
}

impl Explainer for AttributionExplainer<'_> {
    fn explain(&self, x: &[f64], seed: u64) -> Result<Vec<f64>> {
        Ok(attribute(self.model, self.method, &self.settings, x, self.class, seed)?.scores)
    }
}

pub struct FnExplainer<F>(pub F);

impl<F: Fn(&[f64]) -> Result<Vec<f64>> + Sync> Explainer for FnExplainer<F> {
    fn explain(&self, x: &[f64], _seed: u64) -> Result<Vec<f64>> {
        (self.0)(x)
    }
}

/// Independent seed for evaluation `index` of a search seeded with `seed`.
pub fn call_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.next_u64()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `||e1 - e2|| / ||h1 - h2||`, or `None` when the denominator vanishes.
pub fn explanation_ratio(e1: &[f64], e2: &[f64], h1: &[f64], h2: &[f64]) -> Option<f64> {
    let den = distance(h1, h2);
    (den >= MIN_DENOMINATOR).then(|| distance(e1, e2) / den)
}

/// Pulls `p` back onto the closed ball of radius `eps` around `center`.
fn project(center: &[f64], p: &mut [f64], eps: f64) {
    let d = distance(center, p);
    if d > eps {
        let s = eps / d * (1.0 - 1e-12);
        for (v, c) in p.iter_mut().zip(center) {
            *v = c + (*v - c) * s;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    GradientAscent,
    BlackBox,
    Discrete,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "flag")]
pub enum StabilityFlag {
    DegenerateDenominator,
    EmptyNeighborhood,
    /// The explainer failed before the budget was spent.
    Partial {
        error: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub point: Vec<f64>,
    pub l_hat: f64,
    pub argmax_point: Option<Vec<f64>>,
    pub epsilon: f64,
    pub strategy: Strategy,
    /// Explanation evaluations spent.
    pub budget: usize,
    /// `(f_expl(x), f_expl(x*))`.
    pub explanation_pair: Option<(Vec<f64>, Vec<f64>)>,
    /// The denominator's pair, `(h(x), h(x*))`.
    pub representation_pair: Option<(Vec<f64>, Vec<f64>)>,
    pub flags: Vec<StabilityFlag>,
}

impl StabilityReport {
    fn empty(point: &[f64], epsilon: f64, strategy: Strategy, budget: usize, flag: StabilityFlag) -> Self {
        StabilityReport {
            point: point.to_vec(),
            l_hat: 0.0,
            argmax_point: None,
            epsilon,
            strategy,
            budget,
            explanation_pair: None,
            representation_pair: None,
            flags: vec![flag],
        }
    }

    /// The ratio re-derived from the stored pairs.
    pub fn recompute(&self) -> Option<f64> {
        let (e1, e2) = self.explanation_pair.as_ref()?;
        let (h1, h2) = self.representation_pair.as_ref()?;
        explanation_ratio(e1, e2, h1, h2)
    }

    pub fn pair(&self) -> Option<AdversarialPair> {
        let (e, e_star) = self.explanation_pair.clone()?;
        Some(AdversarialPair {
            x: self.point.clone(),
            x_star: self.argmax_point.clone()?,
            explanation: e,
            explanation_star: e_star,
            l_hat: self.l_hat,
        })
    }
}

/// Running maximum over evaluated candidates.
struct Incumbent {
    ratio: f64,
    point: Vec<f64>,
    explanation: Vec<f64>,
    representation: Vec<f64>,
}

fn offer(best: &mut Option<Incumbent>, ratio: f64, point: &[f64], explanation: Vec<f64>, representation: Vec<f64>) -> bool {
    if best.as_ref().is_some_and(|b| b.ratio >= ratio) {
        return false;
    }
    *best = Some(Incumbent { ratio, point: point.to_vec(), explanation, representation });
    true
}

#[allow(clippy::too_many_arguments)]
fn finish(
    x: &[f64],
    e0: Vec<f64>,
    h0: Vec<f64>,
    best: Option<Incumbent>,
    epsilon: f64,
    strategy: Strategy,
    budget: usize,
    mut flags: Vec<StabilityFlag>,
) -> StabilityReport {
    match best {
        Some(b) => StabilityReport {
            point: x.to_vec(),
            l_hat: b.ratio,
            argmax_point: Some(b.point),
            epsilon,
            strategy,
            budget,
            explanation_pair: Some((e0, b.explanation)),
            representation_pair: Some((h0, b.representation)),
            flags,
        },
        None => {
            flags.insert(0, StabilityFlag::DegenerateDenominator);
            StabilityReport {
                flags,
                ..StabilityReport::empty(x, epsilon, strategy, budget, StabilityFlag::DegenerateDenominator)
            }
        }
    }
}

/// Uniform draw from the ball of radius `eps` around `center`.
fn sample_ball(rng: &mut ChaCha8Rng, center: &[f64], eps: f64) -> Vec<f64> {
    let dir: Vec<f64> = center.iter().map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let r = eps * rng.random::<f64>().powf(1.0 / center.len() as f64);
    center.iter().zip(&dir).map(|(c, d)| c + r * d / norm).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AscentConfig {
    pub epsilon: f64,
    pub steps: usize,
    pub lr: f64,
    pub penalty: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for AscentConfig {
    fn default() -> Self {
        AscentConfig { epsilon: 0.1, steps: 200, lr: 0.01, penalty: 10.0, restarts: 3, seed: 0 }
    }
}

/// Local Lipschitz estimate of `theta` with respect to `h` around `x`, found
/// by gradient ascent on the ratio with a quadratic penalty for leaving the
/// ball. Every iterate inside the ball is a candidate.
pub fn lipschitz_gradient_ascent(model: &SennModel, x: &[f64], cfg: &AscentConfig) -> Result<StabilityReport> {
    if cfg.epsilon.is_nan() || cfg.epsilon <= 0.0 {
        return Err(Error::InvalidArgument(format!("search radius must be positive, got {}", cfg.epsilon)));
    }
    let explainer = SennExplainer { model };
    let theta0 = explainer.explain(x, 0)?;
    let h0 = explainer.represent(x)?;
    let (theta0_t, h0_t, x_t) = (row(&theta0)?, row(&h0)?, row(x)?);
    let mut best = None;
    let mut evals = 1;

    for restart in 0..cfg.restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(call_seed(cfg.seed, restart as u64));
        let mut p = sample_ball(&mut rng, x, cfg.epsilon);
        for step in 0..=cfg.steps {
            let tape = Tape::new();
            let xv = tape.var(row(&p)?);
            let bound = model.bind(&tape, false);
            let theta = bound.relevances(xv)?;
            let h = bound.concepts(xv)?;
            evals += 1;
            let dist = distance(&p, x);
            let (tv, hv) = (theta.value().data().to_vec(), h.value().data().to_vec());
            let Some(ratio) = explanation_ratio(&theta0, &tv, &h0, &hv) else { break };
            if dist <= cfg.epsilon {
                offer(&mut best, ratio, &p, tv, hv);
            }
            if step == cfg.steps {
                break;
            }
            let num = theta.sub(&tape.constant(theta0_t.clone()))?.sum_squares().add_scalar(1e-30).sqrt();
            let den = h.sub(&tape.constant(h0_t.clone()))?.sum_squares().sqrt();
            let mut objective = num.div(&den)?;
            if dist > cfg.epsilon {
                let excess = xv.sub(&tape.constant(x_t.clone()))?.sum_squares().sqrt().add_scalar(-cfg.epsilon);
                objective = objective.sub(&excess.square().scale(cfg.penalty))?;
            }
            let g = grad_values(&objective, &[xv])?.remove(0);
            let gnorm = g.data().iter().map(|v| v * v).sum::<f64>().sqrt();
            if !gnorm.is_finite() || gnorm == 0.0 {
                break;
            }
            let scale = cfg.lr / gnorm.max(1.0);
            for (v, d) in p.iter_mut().zip(g.data()) {
                *v += scale * d;
            }
        }
        project(x, &mut p, cfg.epsilon);
        let (tv, hv) = (explainer.explain(&p, 0)?, explainer.represent(&p)?);
        evals += 1;
        if let Some(ratio) = explanation_ratio(&theta0, &tv, &h0, &hv) {
            offer(&mut best, ratio, &p, tv, hv);
        }
    }
    Ok(finish(x, theta0, h0, best, cfg.epsilon, Strategy::GradientAscent, evals, Vec::new()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlackBoxConfig {
    pub epsilon: f64,
    /// Explainer evaluations, the one at `x` included.
    pub budget: usize,
    /// Share of the remaining budget spent on space-filling samples before
    /// coordinate refinement.
    pub exploration: f64,
    pub seed: u64,
}

impl Default for BlackBoxConfig {
    fn default() -> Self {
        BlackBoxConfig { epsilon: 0.1, budget: 200, exploration: 0.5, seed: 0 }
    }
}

/// Latin hypercube sample of the cube `[-1, 1]^n`, `count` points.
fn latin_hypercube(rng: &mut ChaCha8Rng, count: usize, n: usize) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; n]; count];
    let mut strata: Vec<usize> = (0..count).collect();
    for j in 0..n {
        strata.shuffle(rng);
        for (p, &s) in points.iter_mut().zip(&strata) {
            p[j] = 2.0 * (s as f64 + rng.random::<f64>()) / count as f64 - 1.0;
        }
    }
    points
}

/// Derivative-free maximization of the ratio over the ball: Latin hypercube
/// samples of the enclosing cube, pulled into the ball, then coordinate
/// steps around the incumbent with a shrinking step. Uses exactly
/// `budget` explainer evaluations unless the explainer fails.
pub fn lipschitz_black_box(explainer: &dyn Explainer, x: &[f64], cfg: &BlackBoxConfig) -> Result<StabilityReport> {
    if cfg.budget < 2 {
        return Err(Error::InvalidArgument(format!("budget must be at least 2, got {}", cfg.budget)));
    }
    if cfg.epsilon.is_nan() || cfg.epsilon <= 0.0 {
        return Err(Error::InvalidArgument(format!("search radius must be positive, got {}", cfg.epsilon)));
    }
    let n = x.len();
    let e0 = explainer.explain(x, call_seed(cfg.seed, 0))?;
    let h0 = explainer.represent(x)?;
    let mut evals = 1usize;
    let mut best: Option<Incumbent> = None;
    let mut flags = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let evaluate = |p: &[f64], evals: &mut usize, best: &mut Option<Incumbent>| -> Result<bool> {
        let seed = call_seed(cfg.seed, *evals as u64);
        *evals += 1;
        let e = explainer.explain(p, seed)?;
        let h = explainer.represent(p)?;
        Ok(match explanation_ratio(&e0, &e, &h0, &h) {
            Some(r) => offer(best, r, p, e, h),
            None => false,
        })
    };

    let remaining = cfg.budget - 1;
    let explore = ((remaining as f64 * cfg.exploration).round() as usize).clamp(1, remaining);
    let mut failed = None;
    for u in latin_hypercube(&mut rng, explore, n) {
        let mut p: Vec<f64> = x.iter().zip(&u).map(|(c, d)| c + cfg.epsilon * d).collect();
        project(x, &mut p, cfg.epsilon);
        if let Err(e) = evaluate(&p, &mut evals, &mut best) {
            failed = Some(e);
            break;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut step = cfg.epsilon / 2.0;
    let mut improved_in_sweep = false;
    let mut cursor = 0;
    while failed.is_none() && evals < cfg.budget {
        if cursor == 0 {
            order.shuffle(&mut rng);
        }
        let j = order[cursor / 2];
        let sign = if cursor % 2 == 0 { 1.0 } else { -1.0 };
        let mut p = best.as_ref().map_or_else(|| x.to_vec(), |b| b.point.clone());
        p[j] += sign * step;
        project(x, &mut p, cfg.epsilon);
        match evaluate(&p, &mut evals, &mut best) {
            Ok(better) => improved_in_sweep |= better,
            Err(e) => failed = Some(e),
        }
        cursor += 1;
        if cursor == 2 * n {
            cursor = 0;
            if !improved_in_sweep {
                step /= 2.0;
            }
            improved_in_sweep = false;
        }
    }
    if let Some(e) = failed {
        flags.push(StabilityFlag::Partial { error: e.to_string() });
    }
    Ok(finish(x, e0, h0, best, cfg.epsilon, Strategy::BlackBox, evals, flags))
}

/// Exact maximum of the ratio over the rows of `data` within distance
/// `epsilon` of `x`, excluding copies of `x` itself.
pub fn lipschitz_discrete(
    explainer: &dyn Explainer,
    x: &[f64],
    data: &Tensor,
    epsilon: f64,
    seed: u64,
) -> Result<StabilityReport> {
    if data.cols() != x.len() {
        return Err(Error::ShapeMismatch { op: "lipschitz_discrete", lhs: vec![x.len()], rhs: data.shape().to_vec() });
    }
    let neighbors: Vec<usize> = (0..data.rows())
        .filter(|&r| {
            let d = distance(data.row(r), x);
            d > 0.0 && d <= epsilon
        })
        .collect();
    if neighbors.is_empty() {
        return Ok(StabilityReport::empty(x, epsilon, Strategy::Discrete, 0, StabilityFlag::EmptyNeighborhood));
    }
    let e0 = explainer.explain(x, call_seed(seed, 0))?;
    let h0 = explainer.represent(x)?;
    let mut best = None;
    for (i, &r) in neighbors.iter().enumerate() {
        let p = data.row(r);
        let e = explainer.explain(p, call_seed(seed, i as u64 + 1))?;
        let h = explainer.represent(p)?;
        if let Some(ratio) = explanation_ratio(&e0, &e, &h0, &h) {
            offer(&mut best, ratio, p, e, h);
        }
    }
    Ok(finish(x, e0, h0, best, epsilon, Strategy::Discrete, neighbors.len() + 1, Vec::new()))
}

/// The maximizing pair behind a stability estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversarialPair {
    pub x: Vec<f64>,
    pub x_star: Vec<f64>,
    pub explanation: Vec<f64>,
    pub explanation_star: Vec<f64>,
    pub l_hat: f64,
}

pub enum PairSearch<'a> {
    BlackBox(BlackBoxConfig),
    Discrete { data: &'a Tensor, epsilon: f64, seed: u64 },
}

/// Searches for the input near `x` whose explanation differs most; `None`
/// when no admissible neighbor exists.
pub fn adversarial_pair(explainer: &dyn Explainer, x: &[f64], search: &PairSearch<'_>) -> Result<Option<AdversarialPair>> {
    let report = match search {
        PairSearch::BlackBox(cfg) => lipschitz_black_box(explainer, x, cfg)?,
        PairSearch::Discrete { data, epsilon, seed } => lipschitz_discrete(explainer, x, data, *epsilon, *seed)?,
    };
    Ok(report.pair())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub perturbed: Vec<f64>,
    /// `||f_expl(x) - f_expl(x~)|| / ||x - x~||`, undefined for a zero draw.
    pub ratio: Option<f64>,
    /// `|p(y_hat | x) - p(y_hat | x~)|`.
    pub probability_change: f64,
    pub flags: Vec<StabilityFlag>,
}

/// One Gaussian perturbation `x~ = x + sigma * N(0, I)`.
pub fn gaussian_perturbation_probe(
    model: &dyn Classifier,
    explainer: &dyn Explainer,
    x: &[f64],
    sigma: f64,
    seed: u64,
) -> Result<ProbeResult> {
    if sigma.is_nan() || sigma < 0.0 {
        return Err(Error::InvalidArgument(format!("noise scale must be nonnegative, got {sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perturbed: Vec<f64> = x.iter().map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal)).collect();
    let probs = model.probabilities(&Tensor::from_rows(&[x, perturbed.as_slice()])?)?;
    let c = Tensor::argmax(probs.row(0));
    let probability_change = (probs.row(0)[c] - probs.row(1)[c]).abs();
    let e = explainer.explain(x, call_seed(seed, 0))?;
    let e_tilde = explainer.explain(&perturbed, call_seed(seed, 1))?;
    let ratio = explanation_ratio(&e, &e_tilde, x, &perturbed);
    let flags = if ratio.is_none() { vec![StabilityFlag::DegenerateDenominator] } else { Vec::new() };
    Ok(ProbeResult { perturbed, ratio, probability_change, flags })
}
