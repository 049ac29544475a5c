use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::nn::{Activation, DenseLayer};

fn constant_theta_model(n: usize, m: usize, theta: &[f64]) -> SennModel {
    let layer =
        DenseLayer::from_parts(Tensor::zeros(&[n * m, n]), Tensor::from_vec(theta.to_vec()), Activation::Identity).unwrap();
    let par = Parametrizer::new(Mlp::from_layers(vec![layer]).unwrap(), n, m).unwrap();
    SennModel::new(ConceptEncoder::Identity { inputs: n }, par, Aggregator::Sum).unwrap()
}

fn random_autoencoder_model(seed: u64, aggregator: AggregatorKind) -> SennModel {
    let arch = Architecture {
        inputs: 4,
        classes: 3,
        encoder: EncoderSpec::Autoencoder {
            concepts: 3,
            encoder_hidden: vec![5],
            decoder_hidden: vec![5],
            activation: Activation::Tanh,
            concept_activation: Activation::Identity,
        },
        parametrizer_hidden: vec![6],
        parametrizer_activation: Activation::Tanh,
        aggregator,
    };
    let mut model = SennModel::init(&arch, seed).unwrap();
    if let Aggregator::PositiveAffine { weights } = &mut model.aggregator {
        *weights = Arc::new(Tensor::from_vec(vec![0.5, 1.5, 2.0]));
    }
    model
}

fn rows(r: &[&[f64]]) -> Tensor {
    Tensor::from_rows(r).unwrap()
}

#[test]
fn two_concepts_one_class_arithmetic() {
    let model = constant_theta_model(2, 1, &[1.0, 2.0]);
    let logits = model.logits(&rows(&[&[3.0, -1.0]])).unwrap();
    assert_eq!(logits.data(), &[1.0]);
}

#[test]
fn constant_theta_reduces_to_linear_classifier() {
    // theta row-major k x m with k = 3 features, m = 2 classes.
    let theta = [0.5, -1.0, 2.0, 0.25, -0.75, 1.5];
    let model = constant_theta_model(3, 2, &theta);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let expl = model.explain(&x).unwrap();
        for c in 0..2 {
            let linear: f64 = (0..3).map(|i| theta[i * 2 + c] * x[i]).sum();
            assert!((expl.logits[c] - linear).abs() < 1e-12);
        }
        for i in 0..3 {
            assert_eq!(expl.relevances[i], vec![theta[i * 2], theta[i * 2 + 1]]);
        }
    }
}

#[test]
fn explanation_contributions_sum_to_logit() {
    let model = random_autoencoder_model(2, AggregatorKind::Sum);
    let expl = model.explain(&[0.3, -0.1, 1.2, 0.5]).unwrap();
    let c = expl.predicted_class;
    let total: f64 = expl.class_contributions(c).iter().sum();
    assert!((total - expl.logits[c]).abs() < 1e-12);
    assert_eq!(c, Tensor::argmax(&expl.logits));
    let probs = model.predict(&rows(&[&[0.3, -0.1, 1.2, 0.5]])).unwrap();
    assert_eq!(c, Tensor::argmax(probs.row(0)));
}

#[test]
fn identity_encoder_is_exact_and_has_no_decoder() {
    let model = SennModel::init(&Architecture::tabular(3, 2, &[4]), 0).unwrap();
    let x = rows(&[&[0.1, 0.2, 0.3], &[-1.0, 5.0, 7.0]]);
    assert_eq!(model.encode_concepts(&x).unwrap(), x);
    assert!(matches!(model.reconstruct(&x), Err(Error::NoDecoder)));
}

#[test]
fn untrained_autoencoder_reconstructs_imperfectly() {
    let model = random_autoencoder_model(1, AggregatorKind::Sum);
    let x = rows(&[&[0.3, -0.1, 1.2, 0.5]]);
    let xhat = model.reconstruct(&x).unwrap();
    assert_eq!(xhat.shape(), x.shape());
    let err: f64 = x.data().iter().zip(xhat.data()).map(|(a, b)| (a - b).powi(2)).sum();
    assert!(err > 0.0);
}

#[test]
fn width_mismatch_is_an_error() {
    let model = SennModel::init(&Architecture::tabular(3, 2, &[4]), 0).unwrap();
    assert!(matches!(model.predict(&rows(&[&[1.0, 2.0]])), Err(Error::WidthMismatch { .. })));
}

#[test]
fn prototypes_sorted_by_activation() {
    let model = SennModel::init(&Architecture::tabular(2, 2, &[3]), 0).unwrap();
    let data = rows(&[&[3.0, 0.0], &[1.0, 0.0], &[2.0, 0.0]]);
    assert_eq!(model.prototype_grounding(&data, 0, 2).unwrap(), vec![0, 2]);
    assert_eq!(model.prototype_grounding(&data, 0, 3).unwrap(), vec![0, 2, 1]);
    let tied = rows(&[&[1.0, 0.0], &[2.0, 0.0], &[2.0, 0.0]]);
    assert_eq!(model.prototype_grounding(&tied, 0, 3).unwrap(), vec![1, 2, 0]);
}

fn manual_mlp(mlp: &Mlp, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for l in mlp.layers() {
        let (w, b) = (l.weight(), l.bias());
        h = (0..l.outputs())
            .map(|o| {
                let z = b.data()[o] + (0..l.inputs()).map(|i| w.data()[o * l.inputs() + i] * h[i]).sum::<f64>();
                match l.activation() {
                    Activation::Relu => z.max(0.0),
                    Activation::Tanh => z.tanh(),
                    Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
                    Activation::Identity => z,
                }
            })
            .collect();
    }
    h
}

#[test]
fn forward_matches_manual_trace() {
    for kind in [AggregatorKind::Sum, AggregatorKind::PositiveAffine] {
        let model = random_autoencoder_model(9, kind);
        let x = [0.7, -1.3, 0.2, 0.9];
        let ConceptEncoder::Autoencoder { encoder, .. } = &model.encoder else { unreachable!() };
        let h = manual_mlp(encoder, &x);
        let theta = manual_mlp(&model.parametrizer.net, &x);
        let w = match &model.aggregator {
            Aggregator::Sum => vec![1.0; 3],
            Aggregator::PositiveAffine { weights } => weights.data().to_vec(),
        };
        let logits = model.logits(&rows(&[&x])).unwrap();
        for c in 0..3 {
            let manual: f64 = (0..3).map(|i| w[i] * theta[i * 3 + c] * h[i]).sum();
            assert!((logits.data()[c] - manual).abs() < 1e-12);
        }
    }
}

#[test]
fn architecture_roundtrip() {
    let model = random_autoencoder_model(4, AggregatorKind::PositiveAffine);
    let arch = model.architecture();
    let json = serde_json::to_string(&arch).unwrap();
    let back: Architecture = serde_json::from_str(&json).unwrap();
    assert_eq!(back, arch);
    let rebuilt = SennModel::init(&back, 4).unwrap();
    let names: Vec<_> = rebuilt.named_parameters().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
    let orig: Vec<_> = model.named_parameters().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
    assert_eq!(names, orig);
}

/// Reorders concepts by `perm`: new concept `j` is old concept `perm[j]`.
fn permute_concepts(model: &SennModel, perm: &[usize]) -> SennModel {
    let (k, m) = (model.concepts(), model.classes());
    let mut out = model.clone();
    if let ConceptEncoder::Autoencoder { encoder, decoder } = &mut out.encoder {
        let last = encoder.layers().len() - 1;
        let l = &mut encoder.layers_mut()[last];
        let (w, b) = (l.weight().clone(), l.bias().clone());
        let cols = w.cols();
        for j in 0..k {
            l.bias_mut().data_mut()[j] = b.data()[perm[j]];
            for c in 0..cols {
                l.weight_mut().data_mut()[j * cols + c] = w.data()[perm[j] * cols + c];
            }
        }
        let d = &mut decoder.layers_mut()[0];
        let w = d.weight().clone();
        for r in 0..w.rows() {
            for j in 0..k {
                d.weight_mut().data_mut()[r * k + j] = w.data()[r * k + perm[j]];
            }
        }
    }
    let net = &mut out.parametrizer.net;
    let last = net.layers().len() - 1;
    let l = &mut net.layers_mut()[last];
    let (w, b) = (l.weight().clone(), l.bias().clone());
    let cols = w.cols();
    for j in 0..k {
        for c in 0..m {
            let (dst, src) = (j * m + c, perm[j] * m + c);
            l.bias_mut().data_mut()[dst] = b.data()[src];
            for i in 0..cols {
                l.weight_mut().data_mut()[dst * cols + i] = w.data()[src * cols + i];
            }
        }
    }
    if let Aggregator::PositiveAffine { weights } = &mut out.aggregator {
        let old = weights.clone();
        *weights = Arc::new(Tensor::from_vec(perm.iter().map(|&p| old.data()[p]).collect()));
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sum_aggregator_is_additive(seed in 0u64..1000, x in prop::collection::vec(-2.0f64..2.0, 4)) {
        let model = random_autoencoder_model(seed, AggregatorKind::Sum);
        let expl = model.explain(&x).unwrap();
        for c in 0..3 {
            let s: f64 = expl.class_contributions(c).iter().sum();
            prop_assert!((s - expl.logits[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn positive_affine_is_monotone(seed in 0u64..1000, i in 0usize..3, bump in 0.01f64..3.0,
                                   x in prop::collection::vec(-2.0f64..2.0, 4)) {
        let model = random_autoencoder_model(seed, AggregatorKind::PositiveAffine);
        let expl = model.explain(&x).unwrap();
        let keep = vec![true; 3];
        let mut z = expl.contributions.clone();
        let base = model.aggregator.combine(&z, &keep);
        for v in z[i].iter_mut() {
            *v += bump;
        }
        let bumped = model.aggregator.combine(&z, &keep);
        for c in 0..3 {
            prop_assert!(bumped[c] >= base[c]);
        }
    }

    #[test]
    fn concept_permutation_leaves_prediction(seed in 0u64..1000, perm in Just(vec![0usize, 1, 2]).prop_shuffle(),
                                             x in prop::collection::vec(-2.0f64..2.0, 4)) {
        for kind in [AggregatorKind::Sum, AggregatorKind::PositiveAffine] {
            let model = random_autoencoder_model(seed, kind);
            let permuted = permute_concepts(&model, &perm);
            let x = Tensor::new(vec![1, 4], x.clone()).unwrap();
            let a = model.predict(&x).unwrap();
            let b = permuted.predict(&x).unwrap();
            for (p, q) in a.data().iter().zip(b.data()) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }
    }
}
