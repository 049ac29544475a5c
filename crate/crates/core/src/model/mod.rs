//! Self-explaining models: `f(x) = g(theta_1(x) h_1(x), ..., theta_k(x) h_k(x))`.
//!
//! `theta(x)` is emitted row-major as a `k x m` matrix, so in a batch it is a
//! `B x (k*m)` matrix whose entry `i*m + c` is the relevance of concept `i`
//! for class `c`.

mod arch;

pub use arch::{AggregatorKind, Architecture, EncoderSpec};

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{BoundMlp, Mlp};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub enum ConceptEncoder {
    /// `h(x) = x`, so `k == n`.
    Identity {
        inputs: usize,
    },
    Autoencoder {
        encoder: Mlp,
        decoder: Mlp,
    },
}

impl ConceptEncoder {
    pub fn concepts(&self) -> usize {
        match self {
            ConceptEncoder::Identity { inputs } => *inputs,
            ConceptEncoder::Autoencoder { encoder, .. } => encoder.outputs(),
        }
    }

    pub fn inputs(&self) -> usize {
        match self {
            ConceptEncoder::Identity { inputs } => *inputs,
            ConceptEncoder::Autoencoder { encoder, .. } => encoder.inputs(),
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, ConceptEncoder::Identity { .. })
    }
}

#[derive(Clone, Debug)]
pub struct Parametrizer {
    pub net: Mlp,
    concepts: usize,
    classes: usize,
}

impl Parametrizer {
    pub fn new(net: Mlp, concepts: usize, classes: usize) -> Result<Self> {
        if net.outputs() != concepts * classes {
            return Err(Error::InvalidArgument(format!(
                "parametrizer emits {} values, expected {concepts} x {classes}",
                net.outputs()
            )));
        }
        Ok(Parametrizer { net, concepts, classes })
    }
}

#[derive(Clone, Debug)]
pub enum Aggregator {
    Sum,
    /// `g(z)_c = sum_i w_i z_ic` with `w_i >= 0`.
    PositiveAffine {
        weights: Arc<Tensor>,
    },
}

impl Aggregator {
    pub fn positive_affine(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| w.is_nan() || *w < 0.0) {
            return Err(Error::InvalidArgument("aggregator weights must be nonnegative".into()));
        }
        Ok(Aggregator::PositiveAffine { weights: Arc::new(Tensor::from_vec(weights)) })
    }

    /// Logits from a `k x m` contribution matrix, skipping concepts where `keep` is false.
    pub fn combine(&self, contributions: &[Vec<f64>], keep: &[bool]) -> Vec<f64> {
        let m = contributions.first().map_or(0, Vec::len);
        let mut out = vec![0.0; m];
        for (i, row) in contributions.iter().enumerate() {
            if !keep[i] {
                continue;
            }
            let w = match self {
                Aggregator::Sum => 1.0,
                Aggregator::PositiveAffine { weights } => weights.data()[i],
            };
            for (o, z) in out.iter_mut().zip(row) {
                *o += w * z;
            }
        }
        out
    }
}

/// The explanation of one prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    /// `h_i(x)`, length `k`.
    pub concept_values: Vec<f64>,
    /// `theta_i(x)`, `k` rows of `m`.
    pub relevances: Vec<Vec<f64>>,
    /// `theta_i(x) * h_i(x)`, `k` rows of `m`.
    pub contributions: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
    pub predicted_class: usize,
}

impl Explanation {
    /// Contribution of each concept to class `c`.
    pub fn class_contributions(&self, c: usize) -> Vec<f64> {
        self.contributions.iter().map(|r| r[c]).collect()
    }

    /// Relevance of each concept for class `c`.
    pub fn class_relevances(&self, c: usize) -> Vec<f64> {
        self.relevances.iter().map(|r| r[c]).collect()
    }
}

#[derive(Clone, Debug)]
pub struct SennModel {
    pub encoder: ConceptEncoder,
    pub parametrizer: Parametrizer,
    pub aggregator: Aggregator,
}

impl SennModel {
    pub fn new(encoder: ConceptEncoder, parametrizer: Parametrizer, aggregator: Aggregator) -> Result<Self> {
        let k = encoder.concepts();
        if parametrizer.concepts != k {
            return Err(Error::InvalidArgument(format!("encoder has {k} concepts but parametrizer {}", parametrizer.concepts)));
        }
        if parametrizer.net.inputs() != encoder.inputs() {
            return Err(Error::InvalidArgument("encoder and parametrizer input widths differ".into()));
        }
        if let Aggregator::PositiveAffine { weights } = &aggregator {
            if weights.len() != k {
                return Err(Error::InvalidArgument(format!("{} aggregator weights for {k} concepts", weights.len())));
            }
        }
        Ok(SennModel { encoder, parametrizer, aggregator })
    }

    /// Fresh model with seeded uniform fan-in initialization.
    pub fn init(arch: &Architecture, seed: u64) -> Result<Self> {
        arch.build(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn architecture(&self) -> Architecture {
        Architecture::of(self)
    }

    pub fn inputs(&self) -> usize {
        self.encoder.inputs()
    }

    pub fn concepts(&self) -> usize {
        self.encoder.concepts()
    }

    pub fn classes(&self) -> usize {
        self.parametrizer.classes
    }

    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundSenn<'t> {
        let put = |t: &Arc<Tensor>| if trainable { tape.var_shared(t.clone()) } else { tape.constant_shared(t.clone()) };
        BoundSenn {
            tape,
            encoder: match &self.encoder {
                ConceptEncoder::Identity { .. } => None,
                ConceptEncoder::Autoencoder { encoder, decoder } => {
                    Some((encoder.bind(tape, trainable), decoder.bind(tape, trainable)))
                }
            },
            parametrizer: self.parametrizer.net.bind(tape, trainable),
            weights: match &self.aggregator {
                Aggregator::Sum => None,
                Aggregator::PositiveAffine { weights } => Some(put(weights)),
            },
            inputs: self.inputs(),
            concepts: self.concepts(),
            classes: self.classes(),
        }
    }

    /// Binds caller-supplied parameter nodes, in [`SennModel::named_parameters`] order.
    pub fn bind_params<'t>(&self, params: &[Var<'t>]) -> Result<BoundSenn<'t>> {
        let mut rest = params;
        let mut take = |n: usize| -> Result<&[Var<'t>]> {
            if rest.len() < n {
                return Err(Error::InvalidArgument("too few parameters".into()));
            }
            let (head, tail) = rest.split_at(n);
            rest = tail;
            Ok(head)
        };
        let encoder = match &self.encoder {
            ConceptEncoder::Identity { .. } => None,
            ConceptEncoder::Autoencoder { encoder, decoder } => {
                Some((encoder.bind_vars(take(encoder.parameter_count())?)?, decoder.bind_vars(take(decoder.parameter_count())?)?))
            }
        };
        let parametrizer = self.parametrizer.net.bind_vars(take(self.parametrizer.net.parameter_count())?)?;
        let weights = match &self.aggregator {
            Aggregator::Sum => None,
            Aggregator::PositiveAffine { .. } => Some(take(1)?[0]),
        };
        if !rest.is_empty() {
            return Err(Error::InvalidArgument("too many parameters".into()));
        }
        Ok(BoundSenn {
            tape: parametrizer.params()[0].tape(),
            encoder,
            parametrizer,
            weights,
            inputs: self.inputs(),
            concepts: self.concepts(),
            classes: self.classes(),
        })
    }

    /// Named parameters in binding order.
    pub fn named_parameters(&self) -> Vec<(String, &Tensor)> {
        fn push_mlp<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: &str, mlp: &'a Mlp) {
            for (j, l) in mlp.layers().iter().enumerate() {
                out.push((format!("{prefix}.{j}.weight"), l.weight()));
                out.push((format!("{prefix}.{j}.bias"), l.bias()));
            }
        }
        let mut out = Vec::new();
        if let ConceptEncoder::Autoencoder { encoder, decoder } = &self.encoder {
            push_mlp(&mut out, "encoder", encoder);
            push_mlp(&mut out, "decoder", decoder);
        }
        push_mlp(&mut out, "parametrizer", &self.parametrizer.net);
        if let Aggregator::PositiveAffine { weights } = &self.aggregator {
            out.push(("aggregator.weights".into(), weights));
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        if let ConceptEncoder::Autoencoder { encoder, decoder } = &mut self.encoder {
            out.extend(encoder.parameters_mut());
            out.extend(decoder.parameters_mut());
        }
        out.extend(self.parametrizer.net.parameters_mut());
        if let Aggregator::PositiveAffine { weights } = &mut self.aggregator {
            out.push(Arc::make_mut(weights));
        }
        out
    }

    /// Clamps aggregator weights back to the nonnegative orthant.
    pub fn project(&mut self) {
        if let Aggregator::PositiveAffine { weights } = &mut self.aggregator {
            for w in Arc::make_mut(weights).data_mut() {
                *w = w.max(0.0);
            }
        }
    }

    fn eval<T>(&self, x: &Tensor, f: impl for<'t> FnOnce(&BoundSenn<'t>, Var<'t>) -> Result<T>) -> Result<T> {
        self.check_width(x)?;
        let tape = Tape::new();
        let bound = self.bind(&tape, false);
        f(&bound, tape.constant(x.clone()))
    }

    fn check_width(&self, x: &Tensor) -> Result<()> {
        if x.ndim() != 2 || x.cols() != self.inputs() {
            return Err(Error::WidthMismatch { layer: 0, expected: self.inputs(), actual: *x.shape().last().unwrap_or(&0) });
        }
        Ok(())
    }

    /// Pre-softmax scores, `B x m`.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.eval(x, |b, x| Ok(b.logits(x)?.value().as_ref().clone()))
    }

    /// Class distribution, `B x m`.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.logits(x)?.softmax()
    }

    /// `h(x)`, `B x k`.
    pub fn encode_concepts(&self, x: &Tensor) -> Result<Tensor> {
        self.eval(x, |b, x| Ok(b.concepts(x)?.value().as_ref().clone()))
    }

    /// `h_dec(h(x))`.
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        self.eval(x, |b, x| {
            let h = b.concepts(x)?;
            Ok(b.decode(h)?.value().as_ref().clone())
        })
    }

    /// `theta(x)`, `B x (k*m)`.
    pub fn relevances(&self, x: &Tensor) -> Result<Tensor> {
        self.eval(x, |b, x| Ok(b.relevances(x)?.value().as_ref().clone()))
    }

    /// Explanations for every row of `x`.
    pub fn explain_batch(&self, x: &Tensor) -> Result<Vec<Explanation>> {
        let (h, theta, logits) = self.eval(x, |b, x| {
            let h = b.concepts(x)?;
            let theta = b.relevances(x)?;
            let logits = b.aggregate(h, theta)?;
            Ok((h.value(), theta.value(), logits.value()))
        })?;
        let (k, m) = (self.concepts(), self.classes());
        Ok((0..x.rows())
            .map(|r| {
                let hv = h.row(r).to_vec();
                let relevances: Vec<Vec<f64>> = theta.row(r).chunks(m).map(<[f64]>::to_vec).collect();
                let contributions = (0..k).map(|i| relevances[i].iter().map(|t| t * hv[i]).collect()).collect();
                let logits = logits.row(r).to_vec();
                Explanation { predicted_class: Tensor::argmax(&logits), concept_values: hv, relevances, contributions, logits }
            })
            .collect())
    }

    pub fn explain(&self, x: &[f64]) -> Result<Explanation> {
        let x = Tensor::new(vec![1, x.len()], x.to_vec())?;
        Ok(self.explain_batch(&x)?.remove(0))
    }

    /// Indices of the `l` rows of `data` that most activate concept `i`,
    /// in descending activation order with ties broken by index.
    pub fn prototype_grounding(&self, data: &Tensor, concept: usize, l: usize) -> Result<Vec<usize>> {
        if concept >= self.concepts() {
            return Err(Error::InvalidArgument(format!("concept {concept} out of range for k = {}", self.concepts())));
        }
        let h = self.encode_concepts(data)?;
        Ok(top_indices(&(0..h.rows()).map(|r| h.row(r)[concept]).collect::<Vec<_>>(), l))
    }
}

/// Indices of the `l` largest values, descending, ties by lower index first.
pub fn top_indices(values: &[f64], l: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(l);
    idx
}

/// A [`SennModel`] whose parameters live on a tape.
pub struct BoundSenn<'t> {
    tape: &'t Tape,
    encoder: Option<(BoundMlp<'t>, BoundMlp<'t>)>,
    parametrizer: BoundMlp<'t>,
    weights: Option<Var<'t>>,
    inputs: usize,
    concepts: usize,
    classes: usize,
}

impl<'t> BoundSenn<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Input width `n`.
    pub fn n(&self) -> usize {
        self.inputs
    }

    /// Concept count `k`.
    pub fn k(&self) -> usize {
        self.concepts
    }

    /// Class count `m`.
    pub fn m(&self) -> usize {
        self.classes
    }

    pub fn is_identity(&self) -> bool {
        self.encoder.is_none()
    }

    pub fn concepts(&self, x: Var<'t>) -> Result<Var<'t>> {
        match &self.encoder {
            None => Ok(x),
            Some((enc, _)) => enc.forward(x),
        }
    }

    pub fn decode(&self, h: Var<'t>) -> Result<Var<'t>> {
        match &self.encoder {
            None => Err(Error::NoDecoder),
            Some((_, dec)) => dec.forward(h),
        }
    }

    pub fn relevances(&self, x: Var<'t>) -> Result<Var<'t>> {
        self.parametrizer.forward(x)
    }

    /// Coefficient of `h_i` in logit `c`, as a `B x k x m` tensor.
    pub fn coefficients(&self, theta: Var<'t>) -> Result<Var<'t>> {
        let b = theta.shape()[0];
        let t = theta.reshape(&[b, self.concepts, self.classes])?;
        match self.weights {
            None => Ok(t),
            Some(w) => t.mul(&w.reshape(&[1, self.concepts, 1])?),
        }
    }

    /// `g(theta_1 h_1, ..., theta_k h_k)`, `B x m`.
    pub fn aggregate(&self, h: Var<'t>, theta: Var<'t>) -> Result<Var<'t>> {
        let b = h.shape()[0];
        let coef = self.coefficients(theta)?;
        coef.mul(&h.reshape(&[b, self.concepts, 1])?)?.sum_axis(1, false)
    }

    pub fn logits(&self, x: Var<'t>) -> Result<Var<'t>> {
        let h = self.concepts(x)?;
        let theta = self.relevances(x)?;
        self.aggregate(h, theta)
    }

    pub fn params(&self) -> Vec<Var<'t>> {
        let mut out = Vec::new();
        if let Some((e, d)) = &self.encoder {
            out.extend(e.params());
            out.extend(d.params());
        }
        out.extend(self.parametrizer.params());
        out.extend(self.weights);
        out
    }
}

#[cfg(test)]
mod tests;
