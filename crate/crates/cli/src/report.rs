//! Report records: one JSON line per (point, method, metric), and an
//! aggregate CSV of quartiles per (dataset, method, metric).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use senn_core::metrics::quartiles;
use serde::{Deserialize, Serialize};

use crate::error::{IoContext, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub dataset: String,
    pub method: String,
    /// Row of the evaluated split; absent on warning records.
    pub point_id: Option<usize>,
    pub metric: String,
    /// `None` where the metric is undefined at this point.
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub argmax_point: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation_pair: Option<(Vec<f64>, Vec<f64>)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub representation_pair: Option<(Vec<f64>, Vec<f64>)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    pub config_hash: String,
    pub seed: u64,
}

impl ReportRecord {
    pub fn new(
        dataset: &str,
        method: &str,
        point_id: usize,
        metric: &str,
        value: Option<f64>,
        config_hash: &str,
        seed: u64,
    ) -> Self {
        ReportRecord {
            dataset: dataset.into(),
            method: method.into(),
            point_id: Some(point_id),
            metric: metric.into(),
            value,
            argmax_point: None,
            explanation_pair: None,
            representation_pair: None,
            flags: Vec::new(),
            warning: None,
            config_hash: config_hash.into(),
            seed,
        }
    }

    pub fn warning(dataset: &str, method: &str, metric: &str, message: String, config_hash: &str, seed: u64) -> Self {
        ReportRecord {
            point_id: None,
            warning: Some(message),
            ..ReportRecord::new(dataset, method, 0, metric, None, config_hash, seed)
        }
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).at(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").at(path)?;
    }
    w.flush().at(path)
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).at(path)?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub dataset: String,
    pub method: String,
    pub metric: String,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub mean: f64,
    pub n: usize,
}

/// Quartiles of the defined values per (dataset, method, metric), in first
/// appearance order of the methods.
pub fn aggregate(records: &[ReportRecord]) -> Vec<AggregateRow> {
    let mut order: Vec<(String, String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.point_id.is_some()) {
        let key = (r.dataset.clone(), r.method.clone(), r.metric.clone());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().extend(r.value);
    }
    order
        .into_iter()
        .filter_map(|key| {
            let q = quartiles(&groups[&key])?;
            let (dataset, method, metric) = key;
            Some(AggregateRow { dataset, method, metric, q1: q.q1, median: q.median, q3: q.q3, mean: q.mean, n: q.n })
        })
        .collect()
}

pub fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(["dataset", "method", "metric", "q1", "median", "q3", "mean", "n"])?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().at(path)
}
