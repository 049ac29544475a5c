use super::{Attribution, MethodKind};
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp};

/// Epsilon-rule relevance propagation from `logit_c` down to the input:
/// `R_j = sum_k a_j w_jk / (z_k + eps sign(z_k)) R_k` with `z_k = sum_j a_j w_jk`.
/// Relevance passes through relu and identity activations unchanged.
pub fn epsilon_lrp(net: &Mlp, x: &[f64], eps: f64, class: usize) -> Result<Attribution> {
    if let Some(l) = net.layers().iter().find(|l| !matches!(l.activation(), Activation::Relu | Activation::Identity)) {
        return Err(Error::UnsupportedActivation(l.activation().to_string()));
    }
    if class >= net.outputs() {
        return Err(Error::LabelOutOfRange { label: class, classes: net.outputs() });
    }
    if x.len() != net.inputs() {
        return Err(Error::WidthMismatch { layer: 0, expected: net.inputs(), actual: x.len() });
    }
    // Forward pass keeping every layer's input activation.
    let mut inputs = vec![x.to_vec()];
    for l in net.layers() {
        let a = inputs.last().expect("non-empty");
        let (w, b) = (l.weight(), l.bias());
        let out: Vec<f64> = (0..l.outputs())
            .map(|k| {
                let z = b.data()[k] + w.row(k).iter().zip(a).map(|(w, a)| w * a).sum::<f64>();
                if l.activation() == Activation::Relu {
                    z.max(0.0)
                } else {
                    z
                }
            })
            .collect();
        inputs.push(out);
    }
    let logits = inputs.pop().expect("non-empty");
    let mut relevance = vec![0.0; logits.len()];
    relevance[class] = logits[class];
    for (l, a) in net.layers().iter().zip(&inputs).rev() {
        let w = l.weight();
        let mut next = vec![0.0; l.inputs()];
        for (k, &rk) in relevance.iter().enumerate() {
            if rk == 0.0 {
                continue;
            }
            let wk = w.row(k);
            let z: f64 = wk.iter().zip(a).map(|(w, a)| w * a).sum();
            let denom = z + eps * if z >= 0.0 { 1.0 } else { -1.0 };
            for (j, r) in next.iter_mut().enumerate() {
                *r += a[j] * wk[j] / denom * rk;
            }
        }
        relevance = next;
    }
    Ok(Attribution::new(relevance, class, MethodKind::EpsilonLrp)?.with("epsilon", eps))
}
