//! Dataset loading, splitting and standardization.

mod compas;
mod manifest;
mod mnist;

pub use compas::{compas_features, majority_filter, preprocess_compas, AmbiguousGroups, CompasRows, COMPAS_FEATURES};
pub use manifest::{load_manifest, ManifestEntry, Task};
pub use mnist::{load_mnist, read_idx_images, read_idx_labels, IdxImages};

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-feature `(x - mean) / std`, fit on training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    /// Population mean and standard deviation per column; a zero deviation is clamped to 1.
    pub fn fit(x: &Tensor) -> Self {
        let (r, c) = (x.rows(), x.cols());
        let mut mean = vec![0.0; c];
        for i in 0..r {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= r.max(1) as f64);
        let mut var = vec![0.0; c];
        for i in 0..r {
            for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.iter().map(|s| (s / r.max(1) as f64).sqrt()).map(|s| if s > 0.0 { s } else { 1.0 }).collect();
        Scaler { mean, std }
    }

    pub fn transform(&self, x: &Tensor) -> Tensor {
        let c = x.cols();
        let mut out = x.clone();
        for (j, v) in out.data_mut().iter_mut().enumerate() {
            let f = j % c;
            *v = (*v - self.mean[f]) / self.std[f];
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub x_train: Tensor,
    pub y_train: Vec<usize>,
    pub x_val: Tensor,
    pub y_val: Vec<usize>,
    pub x_test: Tensor,
    pub y_test: Vec<usize>,
    pub scaler: Scaler,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
}

impl DatasetSplit {
    pub fn n(&self) -> usize {
        self.feature_names.len()
    }

    pub fn m(&self) -> usize {
        self.class_names.len()
    }
}

/// Sizes of the 80/10/10 partition of `n` rows.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = (0.8 * n as f64).round() as usize;
    let val = ((0.1 * n as f64).round() as usize).min(n - train);
    (train, val, n - train - val)
}

fn matrix(rows: &[&Vec<f64>], width: usize) -> Tensor {
    let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
    Tensor::new(vec![rows.len(), width], data).expect("rows have equal width")
}

/// Shuffles with `seed`, splits 80/10/10 and standardizes with training statistics.
pub fn split_standardize(
    rows: Vec<Vec<f64>>,
    labels: Vec<usize>,
    feature_names: Vec<String>,
    class_names: Vec<String>,
    seed: u64,
) -> Result<DatasetSplit> {
    let width = feature_names.len();
    if rows.len() != labels.len() || rows.iter().any(|r| r.len() != width) {
        return Err(Error::Data("feature rows and labels are inconsistent".into()));
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (a, b, _) = split_sizes(rows.len());
    let part = |idx: &[usize]| -> (Tensor, Vec<usize>) {
        let r: Vec<&Vec<f64>> = idx.iter().map(|&i| &rows[i]).collect();
        (matrix(&r, width), idx.iter().map(|&i| labels[i]).collect())
    };
    let (xtr, y_train) = part(&order[..a]);
    let (xva, y_val) = part(&order[a..a + b]);
    let (xte, y_test) = part(&order[a + b..]);
    let scaler = Scaler::fit(&xtr);
    Ok(DatasetSplit {
        x_train: scaler.transform(&xtr),
        y_train,
        x_val: scaler.transform(&xva),
        y_val,
        x_test: scaler.transform(&xte),
        y_test,
        scaler,
        feature_names,
        class_names,
    })
}

/// Maps label strings to indices: numerically sorted when all are numbers,
/// lexicographically otherwise.
fn encode_labels(raw: &[String]) -> (Vec<usize>, Vec<String>) {
    let distinct: BTreeSet<&String> = raw.iter().collect();
    let mut classes: Vec<String> = distinct.into_iter().cloned().collect();
    if classes.iter().all(|c| c.parse::<f64>().is_ok()) {
        classes.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
    }
    let labels = raw.iter().map(|r| classes.iter().position(|c| c == r).expect("label was collected")).collect();
    (labels, classes)
}

/// Reads a numeric CSV with a header row; every column other than
/// `label_column` is a feature.
pub fn load_uci_csv(path: &Path, label_column: &str, seed: u64) -> Result<DatasetSplit> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::Data(format!("{}: no column `{label_column}`", path.display())))?;
    let feature_names: Vec<String> =
        header.iter().enumerate().filter(|&(i, _)| i != label_idx).map(|(_, h)| h.to_string()).collect();
    let mut rows = Vec::new();
    let mut raw_labels = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row_no = r + 2;
        let mut row = Vec::with_capacity(feature_names.len());
        for (i, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if cell.is_empty() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    row: row_no,
                    column: header[i].to_string(),
                    message: "missing value".into(),
                });
            }
            if i == label_idx {
                raw_labels.push(cell.to_string());
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                row: row_no,
                column: header[i].to_string(),
                message: format!("`{cell}` is not a number"),
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    let (labels, class_names) = encode_labels(&raw_labels);
    split_standardize(rows, labels, feature_names, class_names, seed)
}
