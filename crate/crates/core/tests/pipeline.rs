//! Train, explain and score a model through the public API only.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use senn_core::model::{AggregatorKind, Architecture, EncoderSpec, SennModel};
use senn_core::nn::Activation;
use senn_core::objectives::{robustness_norms, Objective, RobustnessRoute};
use senn_core::train::{evaluate, train, TrainConfig, TrainReport};
use senn_core::Tensor;

const N: usize = 4;

fn synthetic(rows: usize, seed: u64) -> (Tensor, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(rows * N);
    let mut labels = Vec::with_capacity(rows);
    for _ in 0..rows {
        let x: Vec<f64> = (0..N).map(|_| rng.random_range(-2.0..2.0)).collect();
        labels.push(usize::from(x[0] + 0.5 * x[1] * x[2] > 0.0));
        data.extend(x);
    }
    (Tensor::new(vec![rows, N], data).unwrap(), labels)
}

fn arch(encoder: EncoderSpec) -> Architecture {
    Architecture {
        inputs: N,
        classes: 2,
        encoder,
        parametrizer_hidden: vec![8],
        parametrizer_activation: Activation::Tanh,
        aggregator: AggregatorKind::Sum,
    }
}

fn fit(encoder: EncoderSpec, lambda: f64, seed: u64) -> (SennModel, TrainReport) {
    let (x, y) = synthetic(240, 1);
    let (xv, yv) = synthetic(80, 2);
    let mut model = SennModel::init(&arch(encoder), seed).unwrap();
    let cfg = TrainConfig {
        objective: Objective { lambda, ..Default::default() },
        lr: 1e-2,
        epochs: 25,
        batch_size: 32,
        patience: 25,
        seed,
    };
    let report = train(&mut model, (&x, &y), (&xv, &yv), &cfg, |_| {}).unwrap();
    (model, report)
}

fn autoencoder() -> EncoderSpec {
    EncoderSpec::Autoencoder {
        concepts: 3,
        encoder_hidden: vec![6],
        decoder_hidden: vec![6],
        activation: Activation::Tanh,
        concept_activation: Activation::Identity,
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn training_learns_and_keeps_best_epoch() {
    let (model, report) = fit(EncoderSpec::Identity, 1e-4, 0);
    let best = report.best().unwrap();
    let lowest = report.epochs.iter().map(|e| e.val.total).fold(f64::INFINITY, f64::min);
    assert_eq!(best.val.total, lowest);
    assert_eq!(best.val.total, report.best_val_loss);

    let (xt, yt) = synthetic(200, 3);
    let obj = Objective { lambda: 0.0, xi: 0.0, ..Default::default() };
    let (_, acc) = evaluate(&model, &xt, &yt, &obj, 64).unwrap();
    assert!(acc > 0.8, "test accuracy {acc}");
}

#[test]
fn training_is_deterministic() {
    let (a, ra) = fit(autoencoder(), 1e-3, 7);
    let (b, rb) = fit(autoencoder(), 1e-3, 7);
    assert_eq!(ra, rb);
    for ((na, ta), (nb, tb)) in a.named_parameters().into_iter().zip(b.named_parameters()) {
        assert_eq!(na, nb);
        assert_eq!(ta.data(), tb.data());
    }
}

#[test]
fn trained_model_routes_agree() {
    let (model, _) = fit(autoencoder(), 1e-3, 3);
    let (x, _) = synthetic(16, 4);
    let split = robustness_norms(&model, &x, RobustnessRoute::Split).unwrap();
    let direct = robustness_norms(&model, &x, RobustnessRoute::Direct).unwrap();
    for (s, d) in split.iter().zip(&direct) {
        assert!((s - d).abs() <= 1e-9 * (1.0 + d.abs()), "split {s} direct {d}");
    }
}

#[test]
fn penalty_makes_model_more_locally_linear() {
    let (x, _) = synthetic(100, 5);
    let (loose, _) = fit(EncoderSpec::Identity, 0.0, 0);
    let (tight, _) = fit(EncoderSpec::Identity, 1.0, 0);
    let loose = median(robustness_norms(&loose, &x, RobustnessRoute::Split).unwrap());
    let tight = median(robustness_norms(&tight, &x, RobustnessRoute::Split).unwrap());
    assert!(tight < loose, "lambda 1: {tight}, lambda 0: {loose}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn explanations_add_up_to_logits(x in prop::collection::vec(-3.0f64..3.0, N)) {
        let model = SennModel::init(&arch(autoencoder()), 11).unwrap();
        let e = model.explain(&x).unwrap();
        let logits = model.logits(&Tensor::new(vec![1, N], x.clone()).unwrap()).unwrap();
        for c in 0..2 {
            let sum: f64 = e.class_contributions(c).iter().sum();
            prop_assert!((sum - e.logits[c]).abs() <= 1e-12 * (1.0 + sum.abs()));
            prop_assert!((e.logits[c] - logits.data()[c]).abs() <= 1e-12 * (1.0 + sum.abs()));
            for (i, (t, h)) in e.class_relevances(c).iter().zip(&e.concept_values).enumerate() {
                prop_assert_eq!(e.contributions[i][c], t * h);
            }
        }
        let argmax = if e.logits[1] > e.logits[0] { 1 } else { 0 };
        prop_assert_eq!(e.predicted_class, argmax);
    }
}
