//! Dense layers, cross-entropy, Adam, and a small supervised fitting loop.

mod adam;
mod layer;
mod loss;

pub use adam::AdamState;
pub use layer::{Activation, BoundMlp, DenseLayer, Mlp};
pub use loss::{accuracy, one_hot, softmax_cross_entropy};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_values, Tape};
use crate::error::Result;
use crate::tensor::Tensor;

/// Shuffled mini-batch index lists covering `0..n`.
pub fn minibatches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Gathers rows of a matrix.
pub fn select_rows(x: &Tensor, rows: &[usize]) -> Tensor {
    let c = x.cols();
    let mut data = Vec::with_capacity(rows.len() * c);
    for &r in rows {
        data.extend_from_slice(x.row(r));
    }
    Tensor::new(vec![rows.len(), c], data).expect("consistent shape")
}

/// A plain MLP classifier producing logits.
#[derive(Clone, Debug)]
pub struct MlpClassifier {
    pub net: Mlp,
}

#[derive(Clone, Debug)]
pub struct FitOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Early stopping patience on validation loss; `None` trains all epochs.
    pub patience: Option<usize>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { epochs: 100, batch_size: 64, lr: 2e-4, seed: 0, patience: Some(10) }
    }
}

impl MlpClassifier {
    pub fn new<R: Rng + ?Sized>(widths: &[usize], hidden: Activation, rng: &mut R) -> Self {
        MlpClassifier { net: Mlp::new(widths, hidden, Activation::Identity, rng) }
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.net.forward(x)
    }

    fn loss(&self, x: &Tensor, y: &[usize]) -> Result<f64> {
        let tape = Tape::new();
        let logits = self.net.bind(&tape, false).forward(tape.constant(x.clone()))?;
        softmax_cross_entropy(logits, y)?.value().item()
    }

    /// Minimizes mean cross-entropy with Adam; restores the best validation
    /// parameters when a validation set is given. Returns the epochs run.
    pub fn fit(&mut self, x: &Tensor, y: &[usize], val: Option<(&Tensor, &[usize])>, opts: &FitOptions) -> Result<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut adam = AdamState::new(opts.lr);
        let mut best = (f64::INFINITY, self.net.clone());
        let mut since_best = 0;
        let mut epochs = 0;
        for _ in 0..opts.epochs {
            epochs += 1;
            for batch in minibatches(x.rows(), opts.batch_size, &mut rng) {
                let xb = select_rows(x, &batch);
                let yb: Vec<usize> = batch.iter().map(|&i| y[i]).collect();
                let grads = {
                    let tape = Tape::new();
                    let bound = self.net.bind(&tape, true);
                    let loss = softmax_cross_entropy(bound.forward(tape.constant(xb))?, &yb)?;
                    grad_values(&loss, &bound.params())?
                };
                adam.step(&mut self.net.parameters_mut(), &grads)?;
            }
            if let (Some((vx, vy)), Some(patience)) = (val, opts.patience) {
                let v = self.loss(vx, vy)?;
                if v < best.0 {
                    best = (v, self.net.clone());
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= patience {
                        break;
                    }
                }
            }
        }
        if val.is_some() && opts.patience.is_some() && best.0.is_finite() {
            self.net = best.1;
        }
        Ok(epochs)
    }
}
