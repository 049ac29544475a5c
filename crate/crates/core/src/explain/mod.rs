//! Post-hoc attribution methods, applicable to any classifier exposing logits
//! (and, for the gradient family, input gradients).

mod gradient;
mod lime;
mod linalg;
mod lrp;
mod occlusion;
mod shap;

pub use gradient::{grad_times_input, integrated_gradients, saliency};
pub use lime::{lime_explain, LimeConfig};
pub use linalg::weighted_ridge;
pub use lrp::epsilon_lrp;
pub use occlusion::occlusion;
pub use shap::{exact_shapley, kernel_shap};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_values, Tape};
use crate::error::{Error, Result};
use crate::model::SennModel;
use crate::nn::{Mlp, MlpClassifier};
use crate::tensor::Tensor;

/// A model seen through its logits.
pub trait Classifier: Sync {
    fn n_features(&self) -> usize;
    fn n_classes(&self) -> usize;
    /// `B x n` inputs to `B x m` pre-softmax scores.
    fn logits(&self, x: &Tensor) -> Result<Tensor>;

    fn probabilities(&self, x: &Tensor) -> Result<Tensor> {
        self.logits(x)?.softmax()
    }

    fn predict_class(&self, x: &[f64]) -> Result<usize> {
        let logits = self.logits(&row(x)?)?;
        Ok(Tensor::argmax(logits.data()))
    }

    /// The dense network, when relevance propagation applies.
    fn lrp_network(&self) -> Option<&Mlp> {
        None
    }
}

/// A classifier that can differentiate a logit with respect to its input.
pub trait GradientClassifier: Classifier {
    /// Row `b` holds the gradient of `logit_c(x_b)` with respect to `x_b`.
    fn logit_gradient(&self, x: &Tensor, class: usize) -> Result<Tensor>;
}

pub(crate) fn row(x: &[f64]) -> Result<Tensor> {
    Tensor::new(vec![1, x.len()], x.to_vec())
}

fn check_class(class: usize, m: usize) -> Result<()> {
    if class >= m {
        return Err(Error::LabelOutOfRange { label: class, classes: m });
    }
    Ok(())
}

impl Classifier for SennModel {
    fn n_features(&self) -> usize {
        self.inputs()
    }

    fn n_classes(&self) -> usize {
        self.classes()
    }

    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        SennModel::logits(self, x)
    }
}

impl GradientClassifier for SennModel {
    fn logit_gradient(&self, x: &Tensor, class: usize) -> Result<Tensor> {
        check_class(class, self.classes())?;
        let tape = Tape::new();
        let xv = tape.var(x.clone());
        let out = self.bind(&tape, false).logits(xv)?.slice(1, class, 1)?.sum();
        Ok(grad_values(&out, &[xv])?.remove(0))
    }
}

impl Classifier for MlpClassifier {
    fn n_features(&self) -> usize {
        self.net.inputs()
    }

    fn n_classes(&self) -> usize {
        self.net.outputs()
    }

    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.net.forward(x)
    }

    fn lrp_network(&self) -> Option<&Mlp> {
        Some(&self.net)
    }
}

impl GradientClassifier for MlpClassifier {
    fn logit_gradient(&self, x: &Tensor, class: usize) -> Result<Tensor> {
        check_class(class, self.net.outputs())?;
        let tape = Tape::new();
        let xv = tape.var(x.clone());
        let out = self.net.bind(&tape, false).forward(xv)?.slice(1, class, 1)?.sum();
        Ok(grad_values(&out, &[xv])?.remove(0))
    }
}

/// Wraps a closure mapping `B x n` inputs to `B x m` logits.
pub struct FnClassifier<F> {
    pub n: usize,
    pub m: usize,
    pub f: F,
}

impl<F: Fn(&Tensor) -> Result<Tensor> + Sync> Classifier for FnClassifier<F> {
    fn n_features(&self) -> usize {
        self.n
    }

    fn n_classes(&self) -> usize {
        self.m
    }

    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        (self.f)(x)
    }
}

/// Which model output a perturbation method explains.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Output {
    #[default]
    Probability,
    Logit,
}

impl Output {
    /// Column `class` of the chosen output for every row of `x`.
    pub fn eval(self, model: &dyn Classifier, x: &Tensor, class: usize) -> Result<Vec<f64>> {
        let out = match self {
            Output::Probability => model.probabilities(x)?,
            Output::Logit => model.logits(x)?,
        };
        let m = out.cols();
        Ok(out.data().iter().skip(class).step_by(m).copied().collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Saliency,
    GradInput,
    IntegratedGradients,
    Occlusion,
    EpsilonLrp,
    Lime,
    KernelShap,
    ExactShapley,
}

impl MethodKind {
    pub const BASELINES: [MethodKind; 7] = [
        MethodKind::Lime,
        MethodKind::KernelShap,
        MethodKind::Occlusion,
        MethodKind::GradInput,
        MethodKind::Saliency,
        MethodKind::IntegratedGradients,
        MethodKind::EpsilonLrp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Saliency => "saliency",
            MethodKind::GradInput => "grad_input",
            MethodKind::IntegratedGradients => "int_grad",
            MethodKind::Occlusion => "occlusion",
            MethodKind::EpsilonLrp => "e_lrp",
            MethodKind::Lime => "lime",
            MethodKind::KernelShap => "shap",
            MethodKind::ExactShapley => "exact_shapley",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let all = [MethodKind::ExactShapley].into_iter().chain(Self::BASELINES);
        all.into_iter().find(|m| m.name() == s || format!("{m:?}").eq_ignore_ascii_case(s))
    }

    pub fn uses_sampling(self) -> bool {
        matches!(self, MethodKind::Lime | MethodKind::KernelShap)
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Feature relevance scores for one input and class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub scores: Vec<f64>,
    pub target_class: usize,
    pub method: MethodKind,
    pub metadata: BTreeMap<String, f64>,
}

impl Attribution {
    pub(crate) fn new(scores: Vec<f64>, target_class: usize, method: MethodKind) -> Result<Self> {
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("{method} scores")));
        }
        Ok(Attribution { scores, target_class, method, metadata: BTreeMap::new() })
    }

    pub(crate) fn with(mut self, key: &str, value: f64) -> Self {
        self.metadata.insert(key.to_string(), value);
        self
    }
}

/// Parameters for every baseline method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MethodSettings {
    /// Reference input for integrated gradients, occlusion and SHAP;
    /// `None` means all zeros (the training mean after standardization).
    pub baseline: Option<Vec<f64>>,
    pub ig_steps: usize,
    pub occlusion_group: usize,
    pub lrp_epsilon: f64,
    pub lime: LimeConfig,
    pub shap_samples: usize,
    pub shap_output: Output,
}

impl Default for MethodSettings {
    fn default() -> Self {
        MethodSettings {
            baseline: None,
            ig_steps: 300,
            occlusion_group: 1,
            lrp_epsilon: 1e-4,
            lime: LimeConfig::default(),
            shap_samples: 100,
            shap_output: Output::Probability,
        }
    }
}

impl MethodSettings {
    pub fn baseline_for(&self, n: usize) -> Vec<f64> {
        self.baseline.clone().unwrap_or_else(|| vec![0.0; n])
    }
}

/// Runs `method` on `x` for `class`; `seed` drives the sampling methods.
pub fn attribute(
    model: &dyn GradientClassifier,
    method: MethodKind,
    settings: &MethodSettings,
    x: &[f64],
    class: usize,
    seed: u64,
) -> Result<Attribution> {
    let baseline = settings.baseline_for(x.len());
    match method {
        MethodKind::Saliency => saliency(model, x, class),
        MethodKind::GradInput => grad_times_input(model, x, class),
        MethodKind::IntegratedGradients => integrated_gradients(model, x, &baseline, settings.ig_steps, class),
        MethodKind::Occlusion => occlusion(model, x, &baseline, settings.occlusion_group, class),
        MethodKind::EpsilonLrp => match model.lrp_network() {
            Some(net) => epsilon_lrp(net, x, settings.lrp_epsilon, class),
            None => Err(Error::InvalidArgument("relevance propagation needs a plain dense network".into())),
        },
        MethodKind::Lime => lime_explain(model, x, class, &settings.lime, seed),
        MethodKind::KernelShap => kernel_shap(model, x, &baseline, settings.shap_samples, class, settings.shap_output, seed),
        MethodKind::ExactShapley => exact_shapley(model, x, &baseline, class, settings.shap_output),
    }
}

#[cfg(test)]
mod tests;
