use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use senn_cli::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use senn_cli::commands::{
    cmd_adversarial, cmd_eval, cmd_explain, cmd_prototypes, cmd_train, EvalMetric, ExplainerName, Session, Split, Target,
    TrainLogLine,
};
use senn_cli::config::{ExperimentConfig, LoadedConfig};
use senn_cli::report::read_jsonl;
use senn_cli::report::ReportRecord;
use senn_cli::CliError;
use senn_core::explain::MethodKind;
use senn_core::metrics::explanation_ratio;
use senn_core::model::{EncoderSpec, SennModel};
use senn_core::nn::Activation;
use senn_core::train::evaluate;
use tempfile::TempDir;

fn manifest() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/manifest.json")
}

/// Writes `config` into a fresh directory and opens a session on it.
fn session(config: &ExperimentConfig) -> (TempDir, Session) {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), config);
    let s = Session::from_loaded(LoadedConfig::read(&path).unwrap(), &dir.path().join("out")).unwrap();
    (dir, s)
}

fn write_config(dir: &Path, config: &ExperimentConfig) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    path
}

fn small(dataset: &str) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(dataset);
    c.dataset.manifest = manifest();
    c.training.epochs = 15;
    c.training.lr = 5e-3;
    c.metrics.max_points = Some(6);
    c
}

fn save(model: &SennModel, s: &Session) -> PathBuf {
    let dir = s.default_checkpoint();
    let meta = CheckpointMeta { config_hash: s.hash.clone(), seed: s.seed(), dataset: s.dataset().into() };
    save_checkpoint(model, &dir, &meta).unwrap();
    dir
}

#[test]
fn train_checkpoint_matches_logged_validation_accuracy() {
    let mut c = small("breast-cancer");
    c.training.lambda = 0.0;
    let (_dir, s) = session(&c);
    let summary = cmd_train(&s).unwrap();
    let log: Vec<TrainLogLine> = read_jsonl(&s.out.join("train_log.jsonl")).unwrap();
    assert!(!log.is_empty());
    assert!(log.iter().all(|l| l.config_hash == s.hash && l.seed == 0));
    let best = &log[summary.best_epoch - 1];
    assert_eq!(best.epoch.epoch, summary.best_epoch);

    let (model, manifest) = load_checkpoint(&summary.checkpoint).unwrap();
    assert_eq!(manifest.config_hash, s.hash);
    let (_, val_acc) = evaluate(&model, &s.data.x_val, &s.data.y_val, &c.training.objective(), 64).unwrap();
    assert_eq!(val_acc, best.epoch.val_accuracy);
    assert_eq!(val_acc, summary.val_accuracy);
    assert!(summary.test_accuracy > 0.85, "{}", summary.test_accuracy);
}

#[test]
fn training_is_deterministic() {
    let c = small("wine");
    let logs: Vec<String> = (0..2)
        .map(|_| {
            let (_dir, s) = session(&c);
            cmd_train(&s).unwrap();
            fs::read_to_string(s.out.join("train_log.jsonl")).unwrap()
        })
        .collect();
    assert_eq!(logs[0], logs[1]);
    let (_dir, s) = session(&ExperimentConfig { seed: 1, ..c });
    cmd_train(&s).unwrap();
    assert_ne!(fs::read_to_string(s.out.join("train_log.jsonl")).unwrap(), logs[0]);
}

/// A model whose relevances ignore the input.
fn linear_reduction(s: &Session) -> SennModel {
    let arch = s.config.model.architecture(s.data.n(), s.data.m());
    let mut model = SennModel::init(&arch, 3).unwrap();
    let names: Vec<String> = model.named_parameters().into_iter().map(|(n, _)| n).collect();
    let last = names.iter().rfind(|n| n.ends_with(".weight")).unwrap().clone();
    for (name, t) in names.iter().zip(model.parameters_mut()) {
        if *name == last {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        } else if name.ends_with(".bias") {
            t.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = 0.1 * i as f64 - 0.3);
        }
    }
    model
}

#[test]
fn explain_records() {
    let (_dir, s) = session(&small("wine"));
    let ckpt = save(&linear_reduction(&s), &s);
    let a = cmd_explain(&s, &ckpt, &Target::Index { split: Split::Test, index: 0 }).unwrap();
    let b = cmd_explain(&s, &ckpt, &Target::Index { split: Split::Train, index: 7 }).unwrap();
    assert_eq!(a.explanation.relevances, b.explanation.relevances);
    assert_ne!(a.explanation.concept_values, b.explanation.concept_values);
    assert!(a.prototypes.is_none());
    assert_eq!((a.split, a.point_id), (Some(Split::Test), Some(0)));
    for r in [&a, &b] {
        let e = &r.explanation;
        for c in 0..e.logits.len() {
            let total: f64 = e.class_contributions(c).iter().sum();
            assert!((total - e.logits[c]).abs() < 1e-12);
        }
    }
    let written: serde_json::Value = serde_json::from_slice(&fs::read(s.out.join("explain_0.json")).unwrap()).unwrap();
    assert_eq!(written["config_hash"], serde_json::json!(s.hash));
    assert!(written["relevances"].is_array());

    // a raw row is standardized before explaining
    let raw: Vec<f64> =
        s.data.x_test.row(0).iter().zip(&s.data.scaler.mean).zip(&s.data.scaler.std).map(|((z, m), sd)| z * sd + m).collect();
    let c = cmd_explain(&s, &ckpt, &Target::Input(raw)).unwrap();
    assert_eq!(c.point_id, None);
    for (u, v) in c.input.iter().zip(&a.input) {
        assert!((u - v).abs() < 1e-9);
    }

    let rows = s.data.x_test.rows();
    let err = cmd_explain(&s, &ckpt, &Target::Index { split: Split::Test, index: rows }).unwrap_err();
    assert!(matches!(err, CliError::Usage(ref m) if m.contains("out of range")), "{err}");
    assert!(cmd_explain(&s, &ckpt, &Target::Input(vec![1.0; 3])).is_err());
}

fn mnist_session() -> (TempDir, Session) {
    let mut c = small("mnist");
    c.dataset.mnist_limit = Some(300);
    c.dataset.mnist_test_limit = Some(20);
    c.model.encoder = EncoderSpec::Autoencoder {
        concepts: 4,
        encoder_hidden: vec![16],
        decoder_hidden: vec![16],
        activation: Activation::Relu,
        concept_activation: Activation::Identity,
    };
    c.model.parametrizer_hidden = vec![16];
    c.metrics.prototypes = 5;
    c.metrics.black_box_budget = 12;
    session(&c)
}

#[test]
fn mnist_prototypes_match_direct_grounding() {
    let (_dir, s) = mnist_session();
    let arch = s.config.model.architecture(784, 10);
    let model = SennModel::init(&arch, 5).unwrap();
    let ckpt = save(&model, &s);
    let records = cmd_prototypes(&s, &ckpt).unwrap();
    assert_eq!(records.len(), 4);
    for r in &records {
        assert_eq!(r.train_indices, model.prototype_grounding(&s.data.x_train, r.concept, 5).unwrap());
        let pgm = fs::read(s.out.join(format!("prototypes_concept{}.pgm", r.concept))).unwrap();
        assert!(pgm.starts_with(b"P5\n144 28\n255\n"));
    }
    let e = cmd_explain(&s, &ckpt, &Target::Index { split: Split::Test, index: 2 }).unwrap();
    let protos = e.prototypes.unwrap();
    assert_eq!(protos.len(), 4);
    assert_eq!(protos[1], records[1].train_indices);

    let adv = cmd_adversarial(&s, &ckpt, ExplainerName::Method(MethodKind::Saliency), 1).unwrap().unwrap();
    assert!(adv.pair.l_hat >= 0.0);
    let dist: f64 = adv.pair.x.iter().zip(&adv.pair.x_star).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    assert!(dist <= 1.0 + 1e-9);
    let pgm = fs::read(s.out.join("adversarial_saliency_1.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n115 28\n255\n"));
}

#[test]
fn identity_models_have_no_prototypes() {
    let (_dir, s) = session(&small("wine"));
    let ckpt = save(&linear_reduction(&s), &s);
    assert!(matches!(cmd_prototypes(&s, &ckpt), Err(CliError::Usage(_))));
}

#[test]
fn stability_eval_reports() {
    let mut c = small("breast-cancer");
    c.metrics.black_box_budget = 20;
    c.metrics.lime_budget = 6;
    c.metrics.ascent.steps = 20;
    let (_dir, s) = session(&c);
    let summary = cmd_train(&s).unwrap();
    let explainers = ExplainerName::parse_list("senn,constant,lime,saliency,e_lrp").unwrap();
    let out = cmd_eval(&s, &summary.checkpoint, EvalMetric::StabilityContinuous, &explainers).unwrap();

    let warnings: Vec<&ReportRecord> = out.records.iter().filter(|r| r.warning.is_some()).collect();
    assert_eq!(warnings.len(), 1);
    assert_eq!(warnings[0].method, "e_lrp");
    assert!(warnings[0].point_id.is_none());

    for name in ["senn", "constant", "lime", "saliency"] {
        let rows: Vec<&ReportRecord> = out.records.iter().filter(|r| r.method == name).collect();
        assert_eq!(rows.len(), 6, "{name}");
        assert_eq!(rows.iter().map(|r| r.point_id.unwrap()).collect::<Vec<_>>(), (0..6).collect::<Vec<_>>());
    }
    for r in &out.records {
        assert_eq!((r.config_hash.as_str(), r.seed), (s.hash.as_str(), 0));
        if r.method == "constant" {
            assert_eq!(r.value, Some(0.0));
        }
        if let (Some((e1, e2)), Some((h1, h2))) = (&r.explanation_pair, &r.representation_pair) {
            assert_eq!(explanation_ratio(e1, e2, h1, h2), r.value);
        } else if r.warning.is_none() {
            assert!(!r.flags.is_empty(), "{r:?}");
        }
    }
    assert!(out.aggregate.iter().any(|a| a.method == "senn" && a.n == 6));

    let first = fs::read(&out.jsonl).unwrap();
    let csv = fs::read_to_string(&out.csv).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "dataset,method,metric,q1,median,q3,mean,n");
    assert!(fs::read_to_string(s.out.join("eval_stability-continuous.svg")).unwrap().starts_with("<svg"));
    cmd_eval(&s, &summary.checkpoint, EvalMetric::StabilityContinuous, &explainers).unwrap();
    assert_eq!(fs::read(&out.jsonl).unwrap(), first);
    assert_eq!(fs::read_to_string(&out.csv).unwrap(), csv);
}

#[test]
fn faithfulness_discrete_and_probe_evals() {
    let (_dir, s) = session(&small("wine"));
    let summary = cmd_train(&s).unwrap();
    let explainers = ExplainerName::parse_list("senn,constant,occlusion").unwrap();

    let f = cmd_eval(&s, &summary.checkpoint, EvalMetric::Faithfulness, &explainers).unwrap();
    assert_eq!(f.records.len(), 3 * 6 * 2);
    assert!(f.records.iter().filter(|r| r.method == "constant").all(|r| r.value.is_none()));
    assert!(f.records.iter().filter(|r| r.method == "senn").all(|r| r.value.is_some_and(|v| (-1.0..=1.0).contains(&v))));

    let d = cmd_eval(&s, &summary.checkpoint, EvalMetric::StabilityDiscrete, &explainers).unwrap();
    assert!(d.records.iter().all(|r| r.metric == "lipschitz_discrete"));
    assert!(d.records.iter().filter(|r| r.method == "constant").all(|r| r.value.unwrap_or(0.0) == 0.0));

    let p = cmd_eval(&s, &summary.checkpoint, EvalMetric::GaussianProbe, &explainers).unwrap();
    assert!(p.records.iter().any(|r| r.metric == "probe_probability_change"));
    assert!(p.records.iter().filter(|r| r.metric == "probe_ratio" && r.method == "constant").all(|r| r.value == Some(0.0)));
}

#[test]
fn checkpoint_must_fit_the_dataset() {
    let (_dir, wine) = session(&small("wine"));
    let ckpt = save(&linear_reduction(&wine), &wine);
    let (_dir2, bc) = session(&small("breast-cancer"));
    assert!(matches!(cmd_explain(&bc, &ckpt, &Target::Index { split: Split::Test, index: 0 }), Err(CliError::Usage(_))));
}

#[test]
fn names_parse() {
    assert!(ExplainerName::parse_list("senn, lime,shap").is_ok());
    assert!(ExplainerName::parse_list("senn,bogus").is_err());
    for m in ["faithfulness", "stability-continuous", "stability-discrete", "gaussian-probe"] {
        assert_eq!(m.parse::<EvalMetric>().unwrap().name(), m);
    }
    assert!("stability".parse::<EvalMetric>().is_err());
}

#[test]
fn binary_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small("wine"));
    let out = dir.path().join("run");
    let senn = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_senn"))
            .args(args)
            .args(["--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()])
            .output()
            .unwrap()
    };
    let train = senn(&["train", "--seed", "2"]);
    assert!(train.status.success(), "{}", String::from_utf8_lossy(&train.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&train.stdout).unwrap();
    assert_eq!(summary["seed"], 2);
    assert!(out.join("checkpoint/manifest.json").exists());

    let explain = senn(&["explain", "--seed", "2", "--index", "3"]);
    assert!(explain.status.success(), "{}", String::from_utf8_lossy(&explain.stderr));
    let eval = senn(&["eval", "--seed", "2", "--metric", "faithfulness", "--explainers", "senn,saliency"]);
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    assert!(String::from_utf8_lossy(&eval.stdout).starts_with("dataset,method,metric,q1,median,q3,mean,n"));

    let bad = senn(&["explain", "--seed", "2", "--index", "100000"]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("out of range"));

    fs::write(&config, r#"{"dataset": {"name": "wine"}, "trainig": {}}"#).unwrap();
    let bad = senn(&["train"]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("trainig"));
}
