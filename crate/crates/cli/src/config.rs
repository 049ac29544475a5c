//! Experiment configuration: one JSON file, unknown fields rejected, with a
//! content hash stamped on every artifact produced from it.

use std::fs;
use std::path::{Path, PathBuf};

use senn_core::data::{load_manifest, load_mnist, load_uci_csv, preprocess_compas, AmbiguousGroups, DatasetSplit, Task};
use senn_core::explain::MethodSettings;
use senn_core::metrics::{AscentConfig, Correlation};
use senn_core::model::{AggregatorKind, Architecture, EncoderSpec};
use senn_core::nn::Activation;
use senn_core::objectives::{Objective, RobustnessRoute};
use senn_core::train::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, IoContext, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Entry name in the manifest.
    pub name: String,
    /// Relative paths resolve against the config file's directory.
    #[serde(default = "default_manifest")]
    pub manifest: PathBuf,
    #[serde(default)]
    pub compas_ambiguous: AmbiguousGroups,
    /// Leading training images used; the last tenth of them validate.
    #[serde(default)]
    pub mnist_limit: Option<usize>,
    #[serde(default)]
    pub mnist_test_limit: Option<usize>,
}

fn default_manifest() -> PathBuf {
    PathBuf::from("data/manifest.json")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub encoder: EncoderSpec,
    pub parametrizer_hidden: Vec<usize>,
    pub parametrizer_activation: Activation,
    pub aggregator: AggregatorKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderSpec::Identity,
            parametrizer_hidden: vec![10, 5, 5],
            parametrizer_activation: Activation::Tanh,
            aggregator: AggregatorKind::Sum,
        }
    }
}

impl ModelConfig {
    pub fn architecture(&self, inputs: usize, classes: usize) -> Architecture {
        Architecture {
            inputs,
            classes,
            encoder: self.encoder.clone(),
            parametrizer_hidden: self.parametrizer_hidden.clone(),
            parametrizer_activation: self.parametrizer_activation,
            aggregator: self.aggregator,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub lambda: f64,
    pub xi: f64,
    pub sparsity: f64,
    pub route: RobustnessRoute,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainingConfig {
            lambda: t.objective.lambda,
            xi: t.objective.xi,
            sparsity: t.objective.sparsity,
            route: t.objective.route,
            lr: t.lr,
            epochs: t.epochs,
            batch_size: t.batch_size,
            patience: t.patience,
        }
    }
}

impl TrainingConfig {
    pub fn objective(&self) -> Objective {
        Objective { lambda: self.lambda, xi: self.xi, sparsity: self.sparsity, route: self.route }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            objective: self.objective(),
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            patience: self.patience,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Search radius; `None` picks 1.0 for images and 0.1 otherwise.
    pub epsilon: Option<f64>,
    pub ascent: AscentConfig,
    pub black_box_budget: usize,
    /// Budget for LIME, whose every evaluation is itself a sampled fit.
    pub lime_budget: usize,
    pub correlation: Correlation,
    pub explainers: MethodSettings,
    /// Test points evaluated, from the start of the split; `None` for all.
    pub max_points: Option<usize>,
    pub probe_sigma: f64,
    pub prototypes: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            epsilon: None,
            ascent: AscentConfig::default(),
            black_box_budget: 200,
            lime_budget: 40,
            correlation: Correlation::Pearson,
            explainers: MethodSettings::default(),
            max_points: None,
            probe_sigma: 0.05,
            prototypes: 9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn new(dataset: &str) -> Self {
        ExperimentConfig {
            dataset: DatasetConfig {
                name: dataset.into(),
                manifest: default_manifest(),
                compas_ambiguous: AmbiguousGroups::default(),
                mnist_limit: None,
                mnist_test_limit: None,
            },
            model: ModelConfig::default(),
            training: TrainingConfig::default(),
            metrics: MetricsConfig::default(),
            seed: 0,
        }
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config { path: path.to_path_buf(), message: e.to_string() })
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("configs serialize");
        let digest = Sha256::digest(&bytes);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn epsilon(&self, task: Task) -> f64 {
        self.metrics.epsilon.unwrap_or(if task == Task::Mnist { 1.0 } else { 0.1 })
    }
}

/// A parsed config with the directory its relative paths refer to.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).at(path)?;
        let config = ExperimentConfig::from_json(&text, path)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(LoadedConfig { config, base_dir })
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.base_dir.join(&self.config.dataset.manifest)
    }

    /// Loads and splits the configured dataset.
    pub fn load_dataset(&self) -> Result<(DatasetSplit, Task)> {
        let manifest = self.manifest_path();
        let entries = load_manifest(&manifest)?;
        let d = &self.config.dataset;
        let entry = entries
            .iter()
            .find(|e| e.name == d.name)
            .ok_or_else(|| CliError::Config { path: manifest.clone(), message: format!("no dataset named `{}`", d.name) })?;
        let seed = self.config.seed;
        let split = match entry.task {
            Task::Uci => load_uci_csv(&entry.path, &entry.label_column, seed)?,
            Task::Compas => preprocess_compas(&entry.path, d.compas_ambiguous, seed)?,
            Task::Mnist => load_mnist(&entry.path, d.mnist_limit, d.mnist_test_limit)?,
        };
        Ok((split, entry.task))
    }
}
