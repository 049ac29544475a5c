//! Mini-batch Adam training of self-explaining models with early stopping.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_values, Tape};
use crate::error::{Error, Result};
use crate::model::SennModel;
use crate::nn::{accuracy, minibatches, select_rows, AdamState};
use crate::objectives::{objective, LossBreakdown, Objective};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub objective: Objective,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { objective: Objective::default(), lr: 2e-4, epochs: 200, batch_size: 64, patience: 10, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train: LossBreakdown,
    pub val: LossBreakdown,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    /// Epoch (1-based) whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainReport {
    pub fn best(&self) -> Option<&EpochLog> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }
}

/// Loss breakdown and accuracy over a whole dataset, in chunks of `chunk` rows.
pub fn evaluate(model: &SennModel, x: &Tensor, y: &[usize], obj: &Objective, chunk: usize) -> Result<(LossBreakdown, f64)> {
    let mut parts = Vec::new();
    let mut hits = 0.0;
    let idx: Vec<usize> = (0..x.rows()).collect();
    for rows in idx.chunks(chunk.max(1)) {
        let xb = select_rows(x, rows);
        let yb: Vec<usize> = rows.iter().map(|&i| y[i]).collect();
        let tape = Tape::new();
        let bound = model.bind(&tape, false);
        let (_, br) = objective(&bound, &xb, &yb, obj, true, false)?;
        hits += accuracy(&bound.logits(tape.constant(xb))?.value(), &yb) * rows.len() as f64;
        parts.push((br, rows.len()));
    }
    Ok((LossBreakdown::weighted_mean(&parts), hits / x.rows().max(1) as f64))
}

/// Trains in place and keeps the parameters with the lowest validation total loss.
pub fn train(
    model: &mut SennModel,
    train: (&Tensor, &[usize]),
    val: (&Tensor, &[usize]),
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainReport> {
    let (x, y) = train;
    let obj = &cfg.objective;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(cfg.lr);
    let mut best: Option<(f64, usize, SennModel)> = None;
    let mut logs = Vec::new();
    let mut since_best = 0;
    for epoch in 1..=cfg.epochs {
        let diverged = |e: Error| {
            let last = best.as_ref().map_or(0, |b| b.1);
            Error::NonFinite(format!("{e}; training diverged in epoch {epoch}, last good epoch {last}"))
        };
        let mut parts = Vec::new();
        for batch in minibatches(x.rows(), cfg.batch_size, &mut rng) {
            let xb = select_rows(x, &batch);
            let yb: Vec<usize> = batch.iter().map(|&i| y[i]).collect();
            let (grads, br) = {
                let tape = Tape::new();
                let bound = model.bind(&tape, true);
                let (loss, br) = objective(&bound, &xb, &yb, obj, obj.lambda > 0.0, true).map_err(diverged)?;
                (grad_values(&loss, &bound.params())?, br)
            };
            adam.step(&mut model.parameters_mut(), &grads).map_err(diverged)?;
            model.project();
            parts.push((br, batch.len()));
        }
        let (val_br, val_accuracy) = evaluate(model, val.0, val.1, obj, cfg.batch_size.max(256)).map_err(diverged)?;
        let log = EpochLog { epoch, train: LossBreakdown::weighted_mean(&parts), val: val_br, val_accuracy };
        on_epoch(&log);
        logs.push(log);
        if best.as_ref().is_none_or(|b| val_br.total < b.0) {
            best = Some((val_br.total, epoch, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    let (best_val_loss, best_epoch, best_model) =
        best.ok_or_else(|| Error::InvalidArgument("training needs at least one epoch".into()))?;
    *model = best_model;
    Ok(TrainReport { epochs: logs, best_epoch, best_val_loss })
}

#[cfg(test)]
mod tests {
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    use super::*;
    use crate::model::{AggregatorKind, Architecture, EncoderSpec};
    use crate::nn::Activation;

    fn autoencoder(inputs: usize, concepts: usize, classes: usize, hidden: Vec<usize>) -> Architecture {
        autoencoder_with(inputs, concepts, classes, hidden, Activation::Identity)
    }

    fn autoencoder_with(inputs: usize, concepts: usize, classes: usize, hidden: Vec<usize>, concept: Activation) -> Architecture {
        Architecture {
            inputs,
            classes,
            encoder: EncoderSpec::Autoencoder {
                concepts,
                encoder_hidden: hidden.clone(),
                decoder_hidden: hidden,
                activation: Activation::Tanh,
                concept_activation: concept,
            },
            parametrizer_hidden: vec![4],
            parametrizer_activation: Activation::Tanh,
            aggregator: AggregatorKind::Sum,
        }
    }

    #[test]
    fn autoencoder_learns_a_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pts: Vec<[f64; 2]> = (0..200)
            .map(|_| {
                let t: f64 = rng.random_range(-1.0..1.0);
                [t, 0.5 * t]
            })
            .collect();
        let x = Tensor::from_rows(&pts).unwrap();
        let y = vec![0; 200];
        let mut model = SennModel::init(&autoencoder(2, 1, 1, vec![]), 1).unwrap();
        let cfg = TrainConfig {
            objective: Objective { lambda: 0.0, xi: 1.0, sparsity: 0.0, ..Objective::default() },
            lr: 1e-2,
            epochs: 300,
            batch_size: 32,
            patience: 300,
            seed: 0,
        };
        train(&mut model, (&x, &y), (&x, &y), &cfg, |_| {}).unwrap();
        let xhat = model.reconstruct(&x).unwrap();
        let mse = x.data().iter().zip(xhat.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64;
        assert!(mse < 1e-3, "mse {mse}");
    }

    #[test]
    fn learned_concepts_ground_in_single_clusters() {
        // Three clusters, each active on its own pair of dimensions.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..300 {
            let c = i % 3;
            let mut r = [0.0; 6];
            for (d, v) in r.iter_mut().enumerate() {
                *v = noise.sample(&mut rng) + if d / 2 == c { 1.0 } else { 0.0 };
            }
            rows.push(r);
            labels.push(c);
        }
        let x = Tensor::from_rows(&rows).unwrap();
        let mut model = SennModel::init(&autoencoder_with(6, 3, 3, vec![], Activation::Sigmoid), 2).unwrap();
        let cfg = TrainConfig {
            objective: Objective { lambda: 0.0, xi: 1.0, sparsity: 0.3, ..Objective::default() },
            lr: 1e-2,
            epochs: 150,
            batch_size: 32,
            patience: 150,
            seed: 1,
        };
        train(&mut model, (&x, &labels), (&x, &labels), &cfg, |_| {}).unwrap();
        for concept in 0..3 {
            let protos = model.prototype_grounding(&x, concept, 9).unwrap();
            let cluster = labels[protos[0]];
            assert!(protos.iter().all(|&p| labels[p] == cluster), "concept {concept}: {protos:?}");
        }
    }

    fn xor_data() -> (Tensor, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..200 {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            rows.push([a, b]);
            y.push(usize::from(a * b > 0.0));
        }
        (Tensor::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn trained_xor_model_matches_manual_forward() {
        let (x, y) = xor_data();
        let mut model = SennModel::init(&Architecture::tabular(2, 2, &[8]), 3).unwrap();
        let cfg = TrainConfig {
            objective: Objective { lambda: 0.0, ..Objective::default() },
            lr: 1e-2,
            epochs: 200,
            patience: 200,
            ..TrainConfig::default()
        };
        let report = train(&mut model, (&x, &y), (&x, &y), &cfg, |_| {}).unwrap();
        assert!(report.best().unwrap().val_accuracy > 0.9);
        let layers = model.parametrizer.net.layers();
        for r in 0..5 {
            let xr = x.row(r);
            let mut hidden = [0.0; 8];
            for (o, h) in hidden.iter_mut().enumerate() {
                let w = layers[0].weight().row(o);
                *h = (layers[0].bias().data()[o] + w[0] * xr[0] + w[1] * xr[1]).tanh();
            }
            let theta: Vec<f64> = (0..4)
                .map(|o| layers[1].bias().data()[o] + (0..8).map(|j| layers[1].weight().row(o)[j] * hidden[j]).sum::<f64>())
                .collect();
            let logits = model.logits(&Tensor::from_rows(&[xr]).unwrap()).unwrap();
            for c in 0..2 {
                let manual = theta[c] * xr[0] + theta[2 + c] * xr[1];
                assert!((logits.data()[c] - manual).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (x, y) = xor_data();
        let run = || {
            let mut model = SennModel::init(&Architecture::tabular(2, 2, &[4]), 5).unwrap();
            let cfg = TrainConfig { epochs: 5, lr: 1e-2, ..TrainConfig::default() };
            let report = train(&mut model, (&x, &y), (&x, &y), &cfg, |_| {}).unwrap();
            (report, model.logits(&x).unwrap())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn early_stopping_restores_best() {
        let (x, y) = xor_data();
        let mut model = SennModel::init(&Architecture::tabular(2, 2, &[4]), 5).unwrap();
        let cfg = TrainConfig { epochs: 40, lr: 0.5, patience: 2, ..TrainConfig::default() };
        let report = train(&mut model, (&x, &y), (&x, &y), &cfg, |_| {}).unwrap();
        let (br, _) = evaluate(&model, &x, &y, &cfg.objective, 64).unwrap();
        assert!((br.total - report.best_val_loss).abs() < 1e-12);
        assert!(report.epochs.iter().all(|e| e.val.total >= report.best_val_loss));
    }
}
