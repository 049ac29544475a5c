use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::numeric_gradient;
use crate::nn::{Activation, DenseLayer, FitOptions};

fn linear(w: &[&[f64]], b: &[f64]) -> MlpClassifier {
    let layer =
        DenseLayer::from_parts(Tensor::from_rows(w).unwrap(), Tensor::from_vec(b.to_vec()), Activation::Identity).unwrap();
    MlpClassifier { net: Mlp::from_layers(vec![layer]).unwrap() }
}

fn constant_model(n: usize) -> MlpClassifier {
    linear(&[&vec![0.0; n], &vec![0.0; n]], &[0.3, -0.2])
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn trained_mlp(seed: u64, hidden: Activation, bias: bool) -> (MlpClassifier, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<[f64; 4]> = (0..200).map(|_| [0; 4].map(|_| rng.random_range(-1.5..1.5))).collect();
    let y: Vec<usize> = rows.iter().map(|r| usize::from(r[0] * r[1] + 0.5 * r[2] > 0.0)).collect();
    let x = Tensor::from_rows(&rows).unwrap();
    let mut clf = MlpClassifier::new(&[4, 8, 8, 2], hidden, &mut rng);
    if !bias {
        for l in clf.net.layers_mut() {
            l.bias_mut().data_mut().iter_mut().for_each(|b| *b = 0.0);
            l.weight_mut().data_mut().iter_mut().for_each(|w| *w *= 2.5);
        }
    }
    let opts = FitOptions { epochs: 60, batch_size: 32, lr: 1e-2, seed, patience: None };
    if bias {
        clf.fit(&x, &y, None, &opts).unwrap();
    }
    (clf, x)
}

#[test]
fn gradient_methods_on_linear_model() {
    let model = linear(&[&[2.0, -3.0], &[0.0, 0.0]], &[0.5, 0.0]);
    assert_eq!(saliency(&model, &[0.4, 1.0], 0).unwrap().scores, vec![2.0, 3.0]);
    assert_eq!(grad_times_input(&model, &[1.0, 1.0], 0).unwrap().scores, vec![2.0, -3.0]);
    assert_eq!(grad_times_input(&model, &[0.0, 0.0], 0).unwrap().scores, vec![0.0, 0.0]);
    for steps in [1, 7, 300] {
        let ig = integrated_gradients(&model, &[1.5, -0.5], &[0.5, 0.5], steps, 0).unwrap();
        assert!(close(&ig.scores, &[2.0, 3.0], 1e-12));
    }
    let same = integrated_gradients(&model, &[1.5, -0.5], &[1.5, -0.5], 10, 0).unwrap();
    assert_eq!(same.scores, vec![0.0, 0.0]);
}

#[test]
fn constant_model_has_zero_saliency() {
    let model = constant_model(3);
    assert_eq!(saliency(&model, &[1.0, 2.0, 3.0], 1).unwrap().scores, vec![0.0; 3]);
}

#[test]
fn gradient_methods_agree_on_random_linear_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let n = rng.random_range(2..7);
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let model = linear(&[&w, &vec![0.0; n]], &[rng.random_range(-1.0..1.0), 0.0]);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let zero = vec![0.0; n];
        let s = saliency(&model, &x, 0).unwrap().scores;
        let gi = grad_times_input(&model, &x, 0).unwrap().scores;
        let ig = integrated_gradients(&model, &x, &zero, 13, 0).unwrap().scores;
        let wabs: Vec<f64> = w.iter().map(|v| v.abs()).collect();
        let wx: Vec<f64> = w.iter().zip(&x).map(|(a, b)| a * b).collect();
        assert!(close(&s, &wabs, 1e-10));
        assert!(close(&gi, &wx, 1e-10));
        assert!(close(&ig, &wx, 1e-10));
    }
}

#[test]
fn saliency_matches_finite_differences() {
    let (model, _) = trained_mlp(2, Activation::Tanh, true);
    let x = [0.3, -0.8, 1.1, 0.2];
    let s = saliency(&model, &x, 1).unwrap().scores;
    let fd = numeric_gradient(|p| Ok(model.logits(p)?.data()[1]), &row(&x).unwrap(), 1e-4).unwrap();
    for (a, b) in s.iter().zip(fd.data()) {
        assert!((a - b.abs()).abs() / a.max(1e-8) < 1e-4);
    }
}

#[test]
fn integrated_gradients_completeness() {
    for seed in 0..3 {
        let (model, x) = trained_mlp(seed, Activation::Tanh, true);
        for r in 0..5 {
            let xr = x.row(r);
            let zero = vec![0.0; 4];
            let ig = integrated_gradients(&model, xr, &zero, 300, 1).unwrap();
            let diff = model.logits(&row(xr).unwrap()).unwrap().data()[1] - model.logits(&row(&zero).unwrap()).unwrap().data()[1];
            let total: f64 = ig.scores.iter().sum();
            assert!((total - diff).abs() <= 0.01 * diff.abs().max(1e-3), "{total} vs {diff}");
        }
    }
}

#[test]
fn occlusion_examples() {
    // Logistic model on three features: logit_1 - logit_0 = w . x + b.
    let model = linear(&[&[0.0, 0.0, 0.0], &[1.0, 0.0, -2.0]], &[0.0, 0.5]);
    let x = [1.0, 3.0, 0.5];
    let occ = occlusion(&model, &x, &[0.0; 3], 1, 1).unwrap();
    let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
    let p = sig(1.0 - 1.0 + 0.5);
    assert!(close(&occ.scores, &[p - sig(-1.0 + 0.5), 0.0, p - sig(1.0 + 0.5)], 1e-12));

    let dup = linear(&[&[0.0, 0.0, 0.0], &[0.7, 0.7, 1.0]], &[0.0, 0.0]);
    let occ = occlusion(&dup, &[0.4, 0.4, -1.0], &[0.0; 3], 1, 1).unwrap();
    assert_eq!(occ.scores[0], occ.scores[1]);

    let grouped = occlusion(&model, &x, &[0.0; 3], 2, 1).unwrap();
    assert_eq!(grouped.scores[0], grouped.scores[1]);
}

#[test]
fn lrp_examples() {
    let model = linear(&[&[2.0, -3.0, 0.5], &[1.0, 1.0, 1.0]], &[0.0, 0.0]);
    let x = [0.5, 1.0, -2.0];
    let r = epsilon_lrp(&model.net, &x, 1e-12, 0).unwrap();
    assert!(close(&r.scores, &[1.0, -3.0, -1.0], 1e-9));
    assert_eq!(epsilon_lrp(&model.net, &[0.0; 3], 1e-4, 0).unwrap().scores, vec![0.0; 3]);

    for seed in 0..5 {
        let (model, x) = trained_mlp(seed, Activation::Relu, false);
        for i in 0..10 {
            let xr = x.row(i);
            let logits = model.logits(&row(xr).unwrap()).unwrap();
            let c = Tensor::argmax(logits.data());
            let r = epsilon_lrp(&model.net, xr, 1e-4, c).unwrap();
            let total: f64 = r.scores.iter().sum();
            let target = logits.data()[c];
            assert!((total - target).abs() <= 0.02 * target.abs().max(1e-6), "{total} vs {target}");
        }
    }

    let (tanh, _) = trained_mlp(0, Activation::Tanh, true);
    assert!(matches!(epsilon_lrp(&tanh.net, &[0.0; 4], 1e-4, 0), Err(Error::UnsupportedActivation(_))));
}

#[test]
fn lime_recovers_linear_model() {
    let w = [1.5, -0.5, 2.0];
    let model = linear(&[&w, &[0.0; 3]], &[0.2, 0.0]);
    let cfg = LimeConfig { samples: 2000, sigma: 0.1, output: Output::Logit, ..LimeConfig::default() };
    let a = lime_explain(&model, &[0.3, 0.1, -0.4], 0, &cfg, 7).unwrap();
    for (c, t) in a.scores.iter().zip(w) {
        assert!((c - t).abs() <= 0.05 * t.abs(), "{c} vs {t}");
    }
    let flat = lime_explain(&constant_model(3), &[0.3, 0.1, -0.4], 0, &LimeConfig { samples: 2000, ..cfg.clone() }, 7).unwrap();
    assert!(flat.scores.iter().all(|c| c.abs() < 1e-3));
    let again = lime_explain(&model, &[0.3, 0.1, -0.4], 0, &cfg, 7).unwrap();
    assert_eq!(a, again);
    assert!(lime_explain(&model, &[0.3, 0.1, -0.4], 0, &LimeConfig { samples: 4, ..cfg }, 7).is_err());
}

fn additive(n: usize) -> FnClassifier<impl Fn(&Tensor) -> Result<Tensor> + Sync> {
    FnClassifier {
        n,
        m: 1,
        f: move |x: &Tensor| {
            let v = (0..x.rows())
                .map(|r| x.row(r).iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * v.sin() + v * v * 0.1).sum())
                .collect();
            Tensor::new(vec![x.rows(), 1], v)
        },
    }
}

#[test]
fn exact_shapley_examples() {
    let w = [1.0, -2.0, 0.5];
    let model = linear(&[&w, &[0.0; 3]], &[0.3, 0.0]);
    let (x, base) = ([1.0, 2.0, 3.0], [0.5, -1.0, 0.0]);
    let phi = exact_shapley(&model, &x, &base, 0, Output::Logit).unwrap();
    assert!(close(&phi.scores, &[0.5, -6.0, 1.5], 1e-12));

    let single = FnClassifier { n: 1, m: 1, f: |x: &Tensor| Ok(x.map(|v| v.exp())) };
    let phi = exact_shapley(&single, &[2.0], &[0.0], 0, Output::Logit).unwrap();
    assert!((phi.scores[0] - (2f64.exp() - 1.0)).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let clf = MlpClassifier::new(&[6, 5, 3], Activation::Tanh, &mut rng);
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        let base = vec![0.0; 6];
        for output in [Output::Logit, Output::Probability] {
            let phi = exact_shapley(&clf, &x, &base, 2, output).unwrap();
            let ends = output.eval(&clf, &Tensor::from_rows(&[x.clone(), base.clone()]).unwrap(), 2).unwrap();
            assert!((phi.scores.iter().sum::<f64>() - (ends[0] - ends[1])).abs() < 1e-10);
        }
    }
}

#[test]
fn kernel_shap_examples() {
    let model = additive(5);
    let x = [0.7, -1.2, 0.3, 2.0, -0.4];
    let base = [0.0; 5];
    let exact = exact_shapley(&model, &x, &base, 0, Output::Logit).unwrap();
    let g = |i: usize, v: f64| (i as f64 + 1.0) * v.sin() + v * v * 0.1;
    for i in 0..5 {
        assert!((exact.scores[i] - (g(i, x[i]) - g(i, 0.0))).abs() < 1e-12);
    }
    let approx = kernel_shap(&model, &x, &base, 500, 0, Output::Logit, 1).unwrap();
    assert!(close(&approx.scores, &exact.scores, 1e-9));

    // Sampled regime: 10 features, 200 coalitions out of 1022.
    let model = additive(10);
    let x: Vec<f64> = (0..10).map(|i| (i as f64 * 0.37).sin()).collect();
    let exact = exact_shapley(&model, &x, &[0.0; 10], 0, Output::Logit).unwrap();
    let approx = kernel_shap(&model, &x, &[0.0; 10], 200, 0, Output::Logit, 2).unwrap();
    assert!((approx.scores.iter().sum::<f64>() - exact.scores.iter().sum::<f64>()).abs() < 1e-10);
    assert!(close(&approx.scores, &exact.scores, 1e-8));
}

#[test]
fn kernel_shap_symmetry() {
    let model = FnClassifier {
        n: 8,
        m: 1,
        f: |x: &Tensor| {
            let v = (0..x.rows())
                .map(|r| x.row(r).iter().map(|v| v.tanh()).product::<f64>() + x.row(r).iter().sum::<f64>())
                .collect();
            Tensor::new(vec![x.rows(), 1], v)
        },
    };
    let phi = kernel_shap(&model, &[0.8; 8], &[0.0; 8], 100, 0, Output::Logit, 3).unwrap();
    for p in &phi.scores {
        assert!((p - phi.scores[0]).abs() <= 0.05 * phi.scores[0].abs());
    }
}

#[test]
fn kernel_shap_two_features_matches_exact() {
    let model = FnClassifier {
        n: 2,
        m: 1,
        f: |x: &Tensor| Tensor::new(vec![x.rows(), 1], (0..x.rows()).map(|r| x.row(r)[0] * x.row(r)[1] + x.row(r)[0]).collect()),
    };
    let exact = exact_shapley(&model, &[1.0, 2.0], &[0.5, -1.0], 0, Output::Logit).unwrap();
    let approx = kernel_shap(&model, &[1.0, 2.0], &[0.5, -1.0], 500, 0, Output::Logit, 0).unwrap();
    for (a, e) in approx.scores.iter().zip(&exact.scores) {
        assert!((a - e).abs() <= 0.02 * e.abs());
    }
}

#[test]
fn kernel_shap_error_shrinks_with_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let clf = MlpClassifier::new(&[12, 6, 2], Activation::Tanh, &mut rng);
    let x: Vec<f64> = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
    let base = vec![0.0; 12];
    let exact = exact_shapley(&clf, &x, &base, 1, Output::Probability).unwrap();
    let mean_err = |samples: usize| {
        (0..20)
            .map(|seed| {
                let a = kernel_shap(&clf, &x, &base, samples, 1, Output::Probability, seed).unwrap();
                a.scores.iter().zip(&exact.scores).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
            })
            .sum::<f64>()
            / 20.0
    };
    let errs: Vec<f64> = [50, 200, 1000].into_iter().map(mean_err).collect();
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
}

#[test]
fn explainers_are_pure_given_seed() {
    let (model, x) = trained_mlp(4, Activation::Relu, true);
    let settings = MethodSettings::default();
    for method in MethodKind::BASELINES {
        let a = attribute(&model, method, &settings, x.row(0), 1, 11).unwrap();
        let b = attribute(&model, method, &settings, x.row(0), 1, 11).unwrap();
        assert_eq!(a, b, "{method}");
        assert_eq!(a.scores.len(), 4);
    }
}

#[test]
fn method_names_roundtrip() {
    for m in MethodKind::BASELINES {
        assert_eq!(MethodKind::parse(m.name()), Some(m));
    }
    assert_eq!(MethodKind::parse("nope"), None);
}
