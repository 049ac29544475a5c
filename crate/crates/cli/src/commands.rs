//! The `senn` subcommands, usable as library calls.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use senn_core::data::{DatasetSplit, Task};
use senn_core::explain::{attribute, Classifier, GradientClassifier, MethodKind};
use senn_core::metrics::{
    adversarial_pair, call_seed, gaussian_perturbation_probe, lipschitz_black_box, lipschitz_discrete, lipschitz_gradient_ascent,
    removal_faithfulness, senn_faithfulness, AdversarialPair, AscentConfig, AttributionExplainer, BlackBoxConfig, Correlation,
    Explainer, FnExplainer, PairSearch, PointFaithfulness, SennExplainer, StabilityReport,
};
use senn_core::model::{Explanation, SennModel};
use senn_core::train::{evaluate, train, EpochLog, TrainReport};
use senn_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use crate::config::{ExperimentConfig, LoadedConfig};
use crate::error::{CliError, IoContext, Result};
use crate::plot::{box_plot_svg, tile, write_pgm};
use crate::report::{aggregate, write_aggregate_csv, write_jsonl, AggregateRow, ReportRecord};

/// A config with its dataset loaded and an output directory.
pub struct Session {
    pub config: ExperimentConfig,
    pub hash: String,
    pub data: DatasetSplit,
    pub task: Task,
    pub out: PathBuf,
}

impl Session {
    pub fn open(config_path: &Path, seed: Option<u64>, out: &Path) -> Result<Self> {
        let mut loaded = LoadedConfig::read(config_path)?;
        if let Some(s) = seed {
            loaded.config.seed = s;
        }
        Self::from_loaded(loaded, out)
    }

    pub fn from_loaded(loaded: LoadedConfig, out: &Path) -> Result<Self> {
        let (data, task) = loaded.load_dataset()?;
        fs::create_dir_all(out).at(out)?;
        Ok(Session { hash: loaded.config.hash(), config: loaded.config, data, task, out: out.to_path_buf() })
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    pub fn dataset(&self) -> &str {
        &self.config.dataset.name
    }

    pub fn default_checkpoint(&self) -> PathBuf {
        self.out.join("checkpoint")
    }

    fn load(&self, checkpoint: &Path) -> Result<SennModel> {
        let (model, manifest) = load_checkpoint(checkpoint)?;
        if model.inputs() != self.data.n() || model.classes() != self.data.m() {
            return Err(CliError::Usage(format!(
                "checkpoint {} expects {} inputs and {} classes; dataset `{}` has {} and {}",
                checkpoint.display(),
                model.inputs(),
                model.classes(),
                manifest.dataset,
                self.data.n(),
                self.data.m()
            )));
        }
        Ok(model)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogLine {
    #[serde(flatten)]
    pub epoch: EpochLog,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub dataset: String,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub checkpoint: PathBuf,
    pub config_hash: String,
    pub seed: u64,
}

/// Fits a model to the session's training split.
pub fn fit(config: &ExperimentConfig, data: &DatasetSplit, on_epoch: impl FnMut(&EpochLog)) -> Result<(SennModel, TrainReport)> {
    let arch = config.model.architecture(data.n(), data.m());
    let mut model = SennModel::init(&arch, config.seed)?;
    let cfg = config.training.train_config(config.seed);
    let report = train(&mut model, (&data.x_train, &data.y_train), (&data.x_val, &data.y_val), &cfg, on_epoch)?;
    Ok((model, report))
}

pub fn test_accuracy(model: &SennModel, data: &DatasetSplit) -> Result<f64> {
    let obj = senn_core::objectives::Objective { lambda: 0.0, xi: 0.0, ..Default::default() };
    Ok(evaluate(model, &data.x_test, &data.y_test, &obj, 512)?.1)
}

pub fn cmd_train(s: &Session) -> Result<TrainSummary> {
    let mut lines = Vec::new();
    let (model, report) =
        fit(&s.config, &s.data, |e| lines.push(TrainLogLine { epoch: e.clone(), config_hash: s.hash.clone(), seed: s.seed() }))?;
    write_jsonl(&s.out.join("train_log.jsonl"), &lines)?;
    let checkpoint = s.default_checkpoint();
    save_checkpoint(
        &model,
        &checkpoint,
        &CheckpointMeta { config_hash: s.hash.clone(), seed: s.seed(), dataset: s.dataset().into() },
    )?;
    let summary = TrainSummary {
        dataset: s.dataset().into(),
        best_epoch: report.best_epoch,
        epochs_run: report.epochs.len(),
        val_accuracy: report.best().map_or(f64::NAN, |e| e.val_accuracy),
        test_accuracy: test_accuracy(&model, &s.data)?,
        checkpoint,
        config_hash: s.hash.clone(),
        seed: s.seed(),
    };
    let path = s.out.join("train_summary.json");
    fs::write(&path, serde_json::to_vec_pretty(&summary)?).at(&path)?;
    Ok(summary)
}

/// Which split a row index refers to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    #[default]
    Test,
}

impl FromStr for Split {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(CliError::Usage(format!("unknown split `{s}`; expected train, val or test"))),
        }
    }
}

fn split_rows(data: &DatasetSplit, split: Split) -> &Tensor {
    match split {
        Split::Train => &data.x_train,
        Split::Val => &data.x_val,
        Split::Test => &data.x_test,
    }
}

fn pick_row(data: &DatasetSplit, split: Split, index: usize) -> Result<Vec<f64>> {
    let x = split_rows(data, split);
    if index >= x.rows() {
        return Err(CliError::Usage(format!("index {index} out of range for the {split:?} split of {} rows", x.rows())));
    }
    Ok(x.row(index).to_vec())
}

#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    Index {
        split: Split,
        index: usize,
    },
    /// A raw feature row, standardized with the training scaler.
    Input(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainRecord {
    pub dataset: String,
    pub split: Option<Split>,
    pub point_id: Option<usize>,
    pub input: Vec<f64>,
    #[serde(flatten)]
    pub explanation: Explanation,
    /// Per learned concept, the training rows that activate it most.
    pub prototypes: Option<Vec<Vec<usize>>>,
    pub config_hash: String,
    pub seed: u64,
}

pub fn cmd_explain(s: &Session, checkpoint: &Path, target: &Target) -> Result<ExplainRecord> {
    let model = s.load(checkpoint)?;
    let (input, split, point_id) = match target {
        Target::Index { split, index } => (pick_row(&s.data, *split, *index)?, Some(*split), Some(*index)),
        Target::Input(raw) => {
            if raw.len() != s.data.n() {
                return Err(CliError::Usage(format!("input has {} values, the model takes {}", raw.len(), s.data.n())));
            }
            (s.data.scaler.transform(&Tensor::new(vec![1, raw.len()], raw.clone())?).into_data(), None, None)
        }
    };
    let prototypes = if model.encoder.is_identity() { None } else { Some(prototypes(&model, s)?) };
    let record = ExplainRecord {
        dataset: s.dataset().into(),
        split,
        point_id,
        explanation: model.explain(&input)?,
        input,
        prototypes,
        config_hash: s.hash.clone(),
        seed: s.seed(),
    };
    let name = point_id.map_or_else(|| "explain_input.json".to_string(), |i| format!("explain_{i}.json"));
    let path = s.out.join(name);
    fs::write(&path, serde_json::to_vec_pretty(&record)?).at(&path)?;
    Ok(record)
}

fn prototypes(model: &SennModel, s: &Session) -> Result<Vec<Vec<usize>>> {
    (0..model.concepts()).map(|c| Ok(model.prototype_grounding(&s.data.x_train, c, s.config.metrics.prototypes)?)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeRecord {
    pub dataset: String,
    pub concept: usize,
    pub train_indices: Vec<usize>,
    pub config_hash: String,
    pub seed: u64,
}

pub fn cmd_prototypes(s: &Session, checkpoint: &Path) -> Result<Vec<PrototypeRecord>> {
    let model = s.load(checkpoint)?;
    if model.encoder.is_identity() {
        return Err(CliError::Usage("identity concepts are the input features; there is nothing to ground".into()));
    }
    let protos = prototypes(&model, s)?;
    let records: Vec<PrototypeRecord> = protos
        .iter()
        .enumerate()
        .map(|(concept, idx)| PrototypeRecord {
            dataset: s.dataset().into(),
            concept,
            train_indices: idx.clone(),
            config_hash: s.hash.clone(),
            seed: s.seed(),
        })
        .collect();
    write_jsonl(&s.out.join("prototypes.jsonl"), &records)?;
    if s.task == Task::Mnist {
        for r in &records {
            let images: Vec<&[f64]> = r.train_indices.iter().map(|&i| s.data.x_train.row(i)).collect();
            let (w, pixels) = tile(&images, 28, 28);
            write_pgm(&s.out.join(format!("prototypes_concept{}.pgm", r.concept)), w, 28, &pixels)?;
        }
    }
    Ok(records)
}

/// An explanation method under evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExplainerName {
    /// The model's own relevance scores.
    Senn,
    /// Always the zero vector; a sanity reference.
    Constant,
    Method(MethodKind),
}

impl ExplainerName {
    pub const DEFAULTS: [ExplainerName; 8] = [
        ExplainerName::Senn,
        ExplainerName::Method(MethodKind::Lime),
        ExplainerName::Method(MethodKind::KernelShap),
        ExplainerName::Method(MethodKind::Saliency),
        ExplainerName::Method(MethodKind::GradInput),
        ExplainerName::Method(MethodKind::IntegratedGradients),
        ExplainerName::Method(MethodKind::Occlusion),
        ExplainerName::Method(MethodKind::EpsilonLrp),
    ];

    pub fn parse_list(list: &str) -> Result<Vec<Self>> {
        list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::parse).collect()
    }
}

impl FromStr for ExplainerName {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "senn" => Ok(ExplainerName::Senn),
            "constant" => Ok(ExplainerName::Constant),
            _ => {
                MethodKind::parse(s).map(ExplainerName::Method).ok_or_else(|| CliError::Usage(format!("unknown explainer `{s}`")))
            }
        }
    }
}

impl fmt::Display for ExplainerName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExplainerName::Senn => f.write_str("senn"),
            ExplainerName::Constant => f.write_str("constant"),
            ExplainerName::Method(m) => write!(f, "{m}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMetric {
    Faithfulness,
    StabilityContinuous,
    StabilityDiscrete,
    GaussianProbe,
}

impl EvalMetric {
    pub fn name(self) -> &'static str {
        match self {
            EvalMetric::Faithfulness => "faithfulness",
            EvalMetric::StabilityContinuous => "stability-continuous",
            EvalMetric::StabilityDiscrete => "stability-discrete",
            EvalMetric::GaussianProbe => "gaussian-probe",
        }
    }
}

impl FromStr for EvalMetric {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        [EvalMetric::Faithfulness, EvalMetric::StabilityContinuous, EvalMetric::StabilityDiscrete, EvalMetric::GaussianProbe]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| CliError::Usage(format!("unknown metric `{s}`")))
    }
}

/// Why an explainer cannot run against this model, if it cannot.
fn incompatibility(model: &SennModel, name: ExplainerName) -> Option<String> {
    match name {
        ExplainerName::Method(MethodKind::EpsilonLrp) if model.lrp_network().is_none() => {
            Some("relevance propagation needs a plain dense network; skipped".into())
        }
        ExplainerName::Method(MethodKind::ExactShapley) if model.inputs() > 12 => {
            Some(format!("exact Shapley values over {} features are intractable; skipped", model.inputs()))
        }
        _ => None,
    }
}

/// Evaluates `metric` for every explainer on the given rows of the test split.
pub fn evaluate_metric(
    s: &Session,
    model: &SennModel,
    metric: EvalMetric,
    explainers: &[ExplainerName],
    points: &[usize],
) -> Result<Vec<ReportRecord>> {
    let mut records = Vec::new();
    for &name in explainers {
        if let Some(why) = incompatibility(model, name) {
            records.push(ReportRecord::warning(s.dataset(), &name.to_string(), metric.name(), why, &s.hash, s.seed()));
            continue;
        }
        let per_point: Vec<Vec<ReportRecord>> =
            points.par_iter().map(|&i| point_records(s, model, metric, name, i)).collect::<Result<_>>()?;
        records.extend(per_point.into_iter().flatten());
    }
    Ok(records)
}

fn point_records(s: &Session, model: &SennModel, metric: EvalMetric, name: ExplainerName, i: usize) -> Result<Vec<ReportRecord>> {
    let x = s.data.x_test.row(i);
    let method = name.to_string();
    let seed = call_seed(s.seed(), i as u64);
    let record = |metric: &str, value| ReportRecord::new(s.dataset(), &method, i, metric, value, &s.hash, s.seed());
    let m = &s.config.metrics;
    let eps = s.config.epsilon(s.task);
    Ok(match metric {
        EvalMetric::Faithfulness => {
            let p = faithfulness_point(s, model, name, x, seed)?;
            let (primary, other, other_name) = match m.correlation {
                Correlation::Pearson => (p.pearson, p.spearman, "faithfulness_spearman"),
                Correlation::Spearman => (p.spearman, p.pearson, "faithfulness_pearson"),
            };
            vec![record("faithfulness", primary), record(other_name, other)]
        }
        EvalMetric::StabilityContinuous => {
            let report = match name {
                ExplainerName::Senn => lipschitz_gradient_ascent(model, x, &AscentConfig { epsilon: eps, seed, ..m.ascent })?,
                _ => {
                    let budget = if name == ExplainerName::Method(MethodKind::Lime) { m.lime_budget } else { m.black_box_budget };
                    let cfg = BlackBoxConfig { epsilon: eps, budget, seed, ..BlackBoxConfig::default() };
                    with_explainer(s, model, name, x, |e| Ok(lipschitz_black_box(e, x, &cfg)?))?
                }
            };
            vec![stability_record(record("lipschitz", Some(report.l_hat)), report)]
        }
        EvalMetric::StabilityDiscrete => {
            let report = with_explainer(s, model, name, x, |e| Ok(lipschitz_discrete(e, x, &s.data.x_train, eps, seed)?))?;
            vec![stability_record(record("lipschitz_discrete", Some(report.l_hat)), report)]
        }
        EvalMetric::GaussianProbe => {
            let probe =
                with_explainer(s, model, name, x, |e| Ok(gaussian_perturbation_probe(model, e, x, m.probe_sigma, seed)?))?;
            let mut r = record("probe_ratio", probe.ratio);
            r.argmax_point = Some(probe.perturbed);
            r.flags = probe.flags.iter().map(flag_name).collect();
            vec![r, record("probe_probability_change", Some(probe.probability_change))]
        }
    })
}

fn flag_name(f: &senn_core::metrics::StabilityFlag) -> String {
    serde_json::to_value(f).ok().and_then(|v| v.get("flag").and_then(|f| f.as_str()).map(str::to_string)).unwrap_or_default()
}

fn stability_record(mut r: ReportRecord, report: StabilityReport) -> ReportRecord {
    r.flags = report.flags.iter().map(flag_name).collect();
    r.argmax_point = report.argmax_point;
    r.explanation_pair = report.explanation_pair;
    r.representation_pair = report.representation_pair;
    r
}

/// Runs `f` with the explainer `name` fixed to the class predicted at `x`.
fn with_explainer<T>(
    s: &Session,
    model: &SennModel,
    name: ExplainerName,
    x: &[f64],
    f: impl FnOnce(&dyn Explainer) -> Result<T>,
) -> Result<T> {
    match name {
        ExplainerName::Senn => f(&SennExplainer { model }),
        ExplainerName::Constant => {
            let n = x.len();
            f(&FnExplainer(move |_: &[f64]| Ok(vec![0.0; n])))
        }
        ExplainerName::Method(method) => {
            let settings = s.config.metrics.explainers.clone();
            f(&AttributionExplainer::for_point(model as &dyn GradientClassifier, method, settings, x)?)
        }
    }
}

fn faithfulness_point(s: &Session, model: &SennModel, name: ExplainerName, x: &[f64], seed: u64) -> Result<PointFaithfulness> {
    let class = model.predict_class(x)?;
    let settings = &s.config.metrics.explainers;
    let baseline = settings.baseline_for(x.len());
    let scores = match name {
        ExplainerName::Senn => return Ok(senn_faithfulness(model, x)?),
        ExplainerName::Constant => vec![0.0; x.len()],
        ExplainerName::Method(method) => attribute(model, method, settings, x, class, seed)?.scores,
    };
    Ok(removal_faithfulness(model, x, &scores, &baseline, class)?)
}

/// Test rows evaluated under the session's point limit.
pub fn eval_points(s: &Session) -> Vec<usize> {
    let rows = s.data.x_test.rows();
    (0..s.config.metrics.max_points.map_or(rows, |m| m.min(rows))).collect()
}

pub struct EvalOutput {
    pub records: Vec<ReportRecord>,
    pub aggregate: Vec<AggregateRow>,
    pub jsonl: PathBuf,
    pub csv: PathBuf,
}

pub fn cmd_eval(s: &Session, checkpoint: &Path, metric: EvalMetric, explainers: &[ExplainerName]) -> Result<EvalOutput> {
    let model = s.load(checkpoint)?;
    let records = evaluate_metric(s, &model, metric, explainers, &eval_points(s))?;
    for w in records.iter().filter_map(|r| r.warning.as_ref().map(|w| (&r.method, w))) {
        eprintln!("warning: {}: {}", w.0, w.1);
    }
    let rows = aggregate(&records);
    let stem = format!("eval_{}", metric.name());
    let jsonl = s.out.join(format!("{stem}.jsonl"));
    let csv = s.out.join(format!("{stem}.csv"));
    write_jsonl(&jsonl, &records)?;
    write_aggregate_csv(&csv, &rows)?;
    let headline: Vec<AggregateRow> = rows.iter().filter(|r| r.metric == rows[0].metric).cloned().collect();
    if !headline.is_empty() {
        let svg = s.out.join(format!("{stem}.svg"));
        let title = format!("{} {} ({})", s.dataset(), headline[0].metric, s.hash);
        fs::write(&svg, box_plot_svg(&title, &headline)).at(&svg)?;
    }
    Ok(EvalOutput { records, aggregate: rows, jsonl, csv })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversarialRecord {
    pub dataset: String,
    pub method: String,
    pub point_id: usize,
    pub epsilon: f64,
    #[serde(flatten)]
    pub pair: AdversarialPair,
    pub config_hash: String,
    pub seed: u64,
}

pub fn cmd_adversarial(s: &Session, checkpoint: &Path, name: ExplainerName, index: usize) -> Result<Option<AdversarialRecord>> {
    let model = s.load(checkpoint)?;
    if let Some(why) = incompatibility(&model, name) {
        return Err(CliError::Usage(format!("{name}: {why}")));
    }
    let x = pick_row(&s.data, Split::Test, index)?;
    let eps = s.config.epsilon(s.task);
    let m = &s.config.metrics;
    let seed = call_seed(s.seed(), index as u64);
    let pair = match name {
        ExplainerName::Senn => lipschitz_gradient_ascent(&model, &x, &AscentConfig { epsilon: eps, seed, ..m.ascent })?.pair(),
        _ => {
            let budget = if name == ExplainerName::Method(MethodKind::Lime) { m.lime_budget } else { m.black_box_budget };
            let search = PairSearch::BlackBox(BlackBoxConfig { epsilon: eps, budget, seed, ..BlackBoxConfig::default() });
            with_explainer(s, &model, name, &x, |e| Ok(adversarial_pair(e, &x, &search)?))?
        }
    };
    let Some(pair) = pair else { return Ok(None) };
    let record = AdversarialRecord {
        dataset: s.dataset().into(),
        method: name.to_string(),
        point_id: index,
        epsilon: eps,
        pair,
        config_hash: s.hash.clone(),
        seed: s.seed(),
    };
    let stem = format!("adversarial_{name}_{index}");
    let path = s.out.join(format!("{stem}.json"));
    fs::write(&path, serde_json::to_vec_pretty(&record)?).at(&path)?;
    if s.task == Task::Mnist {
        let p = &record.pair;
        let mut images: Vec<&[f64]> = vec![&p.x, &p.x_star];
        if p.explanation.len() == 784 {
            images.extend([p.explanation.as_slice(), p.explanation_star.as_slice()]);
        }
        let (w, pixels) = tile(&images, 28, 28);
        write_pgm(&s.out.join(format!("{stem}.pgm")), w, 28, &pixels)?;
    }
    Ok(Some(record))
}
