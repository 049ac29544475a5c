use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One-hot rows for `labels`, validated against `classes`.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(&[labels.len(), classes]);
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        t.data_mut()[i * classes + y] = 1.0;
    }
    Ok(t)
}

/// Mean over the batch of `-log softmax(logits)[label]`.
pub fn softmax_cross_entropy<'t>(logits: Var<'t>, labels: &[usize]) -> Result<Var<'t>> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::ShapeMismatch { op: "softmax_cross_entropy", lhs: shape, rhs: vec![labels.len()] });
    }
    let target = logits.tape().constant(one_hot(labels, shape[1])?);
    let picked = logits.log_softmax()?.mul(&target)?.sum();
    Ok(picked.scale(-1.0 / labels.len().max(1) as f64))
}

/// Fraction of rows whose argmax matches the label.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = labels.iter().enumerate().filter(|&(i, &y)| Tensor::argmax(logits.row(i)) == y).count();
    hits as f64 / labels.len() as f64
}
