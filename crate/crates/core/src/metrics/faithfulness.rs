use serde::{Deserialize, Serialize};

use super::{pearson, quartiles, spearman, Quartiles};
use crate::error::{Error, Result};
use crate::explain::{row, Classifier};
use crate::model::SennModel;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correlation {
    #[default]
    Pearson,
    Spearman,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RemovalMode {
    /// Concept `i` removed by zeroing its coefficient.
    ZeroTheta,
    /// Feature `i` replaced by a reference value.
    BaselineSubstitute,
}

/// Relevance scores against probability drops for one input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointFaithfulness {
    pub class: usize,
    pub scores: Vec<f64>,
    pub drops: Vec<f64>,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
}

impl PointFaithfulness {
    fn new(class: usize, scores: Vec<f64>, drops: Vec<f64>) -> Result<Self> {
        if scores.len() != drops.len() {
            return Err(Error::ShapeMismatch { op: "faithfulness", lhs: vec![scores.len()], rhs: vec![drops.len()] });
        }
        if scores.len() < 3 {
            return Err(Error::InvalidArgument(format!(
                "correlation over {} features is not meaningful; need at least 3",
                scores.len()
            )));
        }
        Ok(PointFaithfulness { class, pearson: pearson(&scores, &drops), spearman: spearman(&scores, &drops), scores, drops })
    }

    pub fn correlation(&self, kind: Correlation) -> Option<f64> {
        match kind {
            Correlation::Pearson => self.pearson,
            Correlation::Spearman => self.spearman,
        }
    }
}

/// Drops in `p(y_hat)` when each concept's coefficient is set to zero, scored
/// against the contribution that concept makes to the predicted logit.
pub fn senn_faithfulness(model: &SennModel, x: &[f64]) -> Result<PointFaithfulness> {
    let e = model.explain(x)?;
    let c = e.predicted_class;
    let k = e.concept_values.len();
    let full = &e.logits;
    let p = softmax_at(full, c);
    let mut keep = vec![true; k];
    let mut scores = Vec::with_capacity(k);
    let mut drops = Vec::with_capacity(k);
    for i in 0..k {
        keep[i] = false;
        let reduced = model.aggregator.combine(&e.contributions, &keep);
        keep[i] = true;
        scores.push(full[c] - reduced[c]);
        drops.push(p - softmax_at(&reduced, c));
    }
    PointFaithfulness::new(c, scores, drops)
}

/// Drops in `p(class)` when feature `i` takes its baseline value, scored
/// against `scores`.
pub fn removal_faithfulness(
    model: &dyn Classifier,
    x: &[f64],
    scores: &[f64],
    baseline: &[f64],
    class: usize,
) -> Result<PointFaithfulness> {
    let n = x.len();
    if baseline.len() != n || scores.len() != n {
        return Err(Error::ShapeMismatch { op: "faithfulness", lhs: vec![n], rhs: vec![baseline.len(), scores.len()] });
    }
    let mut data = Vec::with_capacity((n + 1) * n);
    data.extend_from_slice(x);
    for (i, &b) in baseline.iter().enumerate() {
        data.extend_from_slice(x);
        let at = data.len() - n + i;
        data[at] = b;
    }
    let probs = model.probabilities(&Tensor::matrix(n + 1, n, data)?)?;
    let m = probs.cols();
    if class >= m {
        return Err(Error::LabelOutOfRange { label: class, classes: m });
    }
    let p = probs.row(0)[class];
    let drops = (1..=n).map(|r| p - probs.row(r)[class]).collect();
    PointFaithfulness::new(class, scores.to_vec(), drops)
}

fn softmax_at(logits: &[f64], c: usize) -> f64 {
    let t = row(logits).and_then(|t| t.softmax()).expect("a row is a valid matrix");
    t.data()[c]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessReport {
    pub method: Correlation,
    pub removal_mode: RemovalMode,
    /// One entry per evaluated point; `None` where the correlation is undefined.
    pub per_point_correlation: Vec<Option<f64>>,
    pub aggregate: Option<Quartiles>,
    pub missing: usize,
}

pub fn aggregate_faithfulness(
    points: &[PointFaithfulness],
    method: Correlation,
    removal_mode: RemovalMode,
) -> FaithfulnessReport {
    let per_point: Vec<Option<f64>> = points.iter().map(|p| p.correlation(method)).collect();
    let present: Vec<f64> = per_point.iter().flatten().copied().collect();
    FaithfulnessReport {
        method,
        removal_mode,
        missing: per_point.len() - present.len(),
        aggregate: quartiles(&present),
        per_point_correlation: per_point,
    }
}
