use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply<'t>(self, x: Var<'t>) -> Var<'t> {
        match self {
            Activation::Relu => x.relu(),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => x.sigmoid(),
            Activation::Identity => x,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        };
        f.write_str(s)
    }
}

/// Affine map `x W^T + b` followed by an activation. `W` is `out x in`.
#[derive(Clone, Debug)]
pub struct DenseLayer {
    weight: Arc<Tensor>,
    bias: Arc<Tensor>,
    activation: Activation,
}

impl DenseLayer {
    /// Uniform fan-in initialization, `U(-1/sqrt(in), 1/sqrt(in))` for weights and bias.
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let mut draw = |len: usize| (0..len).map(|_| rng.random_range(-bound..bound)).collect::<Vec<_>>();
        let w = draw(inputs * outputs);
        let b = draw(outputs);
        DenseLayer {
            weight: Arc::new(Tensor::new(vec![outputs, inputs], w).expect("consistent shape")),
            bias: Arc::new(Tensor::from_vec(b)),
            activation,
        }
    }

    pub fn from_parts(weight: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if weight.ndim() != 2 || bias.shape() != [weight.rows()] {
            return Err(Error::ShapeMismatch { op: "dense layer", lhs: weight.shape().to_vec(), rhs: bias.shape().to_vec() });
        }
        Ok(DenseLayer { weight: Arc::new(weight), bias: Arc::new(bias), activation })
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weight_mut(&mut self) -> &mut Tensor {
        Arc::make_mut(&mut self.weight)
    }

    pub fn bias_mut(&mut self) -> &mut Tensor {
        Arc::make_mut(&mut self.bias)
    }
}

/// A stack of dense layers.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

impl Mlp {
    /// `widths = [in, h1, ..., out]`; hidden layers use `hidden`, the last one `output`.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least input and output widths");
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| DenseLayer::new(w[0], w[1], if i == last { output } else { hidden }, rng))
            .collect();
        Mlp { layers }
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("an MLP needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::WidthMismatch { layer: i + 1, expected: pair[1].inputs(), actual: pair[0].outputs() });
            }
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn outputs(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    /// Layer widths `[in, h1, ..., out]`.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.inputs()).chain(self.layers.iter().map(DenseLayer::outputs)).collect()
    }

    /// Puts the parameters on `tape`, as variables when `trainable`.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundMlp<'t> {
        let put = |t: &Arc<Tensor>| if trainable { tape.var_shared(t.clone()) } else { tape.constant_shared(t.clone()) };
        BoundMlp { layers: self.layers.iter().map(|l| (put(&l.weight), put(&l.bias), l.activation)).collect() }
    }

    /// This architecture with caller-supplied parameter nodes, in
    /// [`Mlp::parameters`] order.
    pub fn bind_vars<'t>(&self, params: &[Var<'t>]) -> Result<BoundMlp<'t>> {
        if params.len() != 2 * self.layers.len() {
            return Err(Error::InvalidArgument(format!("expected {} parameters, got {}", 2 * self.layers.len(), params.len())));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (l, p) in self.layers.iter().zip(params.chunks(2)) {
            if p[0].shape() != l.weight.shape() || p[1].shape() != l.bias.shape() {
                return Err(Error::ShapeMismatch { op: "bind_vars", lhs: l.weight.shape().to_vec(), rhs: p[0].shape() });
            }
            layers.push((p[0], p[1], l.activation));
        }
        Ok(BoundMlp { layers })
    }

    pub fn parameter_count(&self) -> usize {
        2 * self.layers.len()
    }

    /// Off-tape forward pass.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let out = self.bind(&tape, false).forward(tape.constant(x.clone()))?;
        Ok(out.value().as_ref().clone())
    }

    /// Parameters in binding order: `w0, b0, w1, b1, ...`.
    pub fn parameters(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [l.weight(), l.bias()]).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [Arc::make_mut(&mut l.weight), Arc::make_mut(&mut l.bias)]).collect()
    }
}

/// An [`Mlp`] whose parameters live on a tape.
#[derive(Clone, Debug)]
pub struct BoundMlp<'t> {
    layers: Vec<(Var<'t>, Var<'t>, Activation)>,
}

impl<'t> BoundMlp<'t> {
    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        let mut h = x;
        for (i, (w, b, act)) in self.layers.iter().enumerate() {
            let width = *h.shape().last().unwrap_or(&0);
            let expected = w.shape()[1];
            if h.shape().len() != 2 || width != expected {
                return Err(Error::WidthMismatch { layer: i, expected, actual: width });
            }
            h = act.apply(h.matmul_t(w, false, true)?.add(b)?);
        }
        Ok(h)
    }

    pub fn params(&self) -> Vec<Var<'t>> {
        self.layers.iter().flat_map(|(w, b, _)| [*w, *b]).collect()
    }
}
