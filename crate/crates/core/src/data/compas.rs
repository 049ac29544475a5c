use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{split_standardize, DatasetSplit};
use crate::error::{Error, Result};

pub const COMPAS_FEATURES: [&str; 11] = [
    "Two_yr_Recidivism",
    "Number_of_Priors",
    "Age_Above_FourtyFive",
    "Age_Below_TwentyFive",
    "African_American",
    "Asian",
    "Hispanic",
    "Native_American",
    "Other",
    "Female",
    "Misdemeanor",
];

/// What happens to groups of identical feature vectors without an 80% label majority.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmbiguousGroups {
    /// The whole group is removed.
    #[default]
    Drop,
    /// The group is kept unchanged; only minority rows of majority groups go.
    Keep,
}

/// Encoded COMPAS rows before the majority filter.
#[derive(Clone, Debug, PartialEq)]
pub struct CompasRows {
    pub rows: Vec<Vec<f64>>,
    /// 1 for a Medium or High risk score, 0 for Low.
    pub labels: Vec<usize>,
}

fn column(header: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    // The raw file repeats some column names; the first occurrence wins.
    header.iter().position(|h| h == name).ok_or_else(|| Error::Data(format!("{}: missing column `{name}`", path.display())))
}

/// Applies the standard row filters and encodes the feature set, with the
/// prior count min-max scaled to `[0, 1]`.
pub fn compas_features(path: &Path) -> Result<CompasRows> {
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    let col = |n: &str| column(&header, n, path);
    let (days, is_recid, degree, score) =
        (col("days_b_screening_arrest")?, col("is_recid")?, col("c_charge_degree")?, col("score_text")?);
    let (two_year, priors, age_cat, race, sex) =
        (col("two_year_recid")?, col("priors_count")?, col("age_cat")?, col("race")?, col("sex")?);

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut priors_raw = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row_no = r + 2;
        let parse = |i: usize| -> Result<f64> {
            record[i].trim().parse::<f64>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                row: row_no,
                column: header[i].to_string(),
                message: format!("`{}` is not a number", &record[i]),
            })
        };
        let d = record[days].trim();
        if d.is_empty() {
            continue;
        }
        let d = parse(days)?;
        if !(-30.0..=30.0).contains(&d) || parse(is_recid)? == -1.0 || &record[degree] == "O" || &record[score] == "N/A" {
            continue;
        }
        let unknown = |col: usize| Error::Parse {
            path: path.to_path_buf(),
            row: row_no,
            column: header[col].to_string(),
            message: format!("unknown category `{}`", &record[col]),
        };
        let (above45, below25) = match &record[age_cat] {
            "Greater than 45" => (1.0, 0.0),
            "Less than 25" => (0.0, 1.0),
            "25 - 45" => (0.0, 0.0),
            _ => return Err(unknown(age_cat)),
        };
        let race_onehot = match &record[race] {
            "African-American" => [1.0, 0.0, 0.0, 0.0, 0.0],
            "Asian" => [0.0, 1.0, 0.0, 0.0, 0.0],
            "Hispanic" => [0.0, 0.0, 1.0, 0.0, 0.0],
            "Native American" => [0.0, 0.0, 0.0, 1.0, 0.0],
            "Other" => [0.0, 0.0, 0.0, 0.0, 1.0],
            "Caucasian" => [0.0; 5],
            _ => return Err(unknown(race)),
        };
        let female = match &record[sex] {
            "Female" => 1.0,
            "Male" => 0.0,
            _ => return Err(unknown(sex)),
        };
        let misdemeanor = match &record[degree] {
            "M" => 1.0,
            "F" => 0.0,
            _ => return Err(unknown(degree)),
        };
        let label = match &record[score] {
            "Low" => 0,
            "Medium" | "High" => 1,
            _ => return Err(unknown(score)),
        };
        let p = parse(priors)?;
        priors_raw.push(p);
        let mut row = vec![parse(two_year)?, p, above45, below25];
        row.extend(race_onehot);
        row.extend([female, misdemeanor]);
        rows.push(row);
        labels.push(label);
    }
    let lo = priors_raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = priors_raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for row in &mut rows {
        row[1] = min_max(row[1], lo, hi);
    }
    Ok(CompasRows { rows, labels })
}

/// `(v - lo) / (hi - lo)`, or 0 when the range is empty.
pub(crate) fn min_max(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        (v - lo) / (hi - lo)
    } else {
        0.0
    }
}

/// Removes rows whose label disagrees with an 80% majority among rows with an
/// identical feature vector. Groups without such a majority are dropped or
/// kept whole according to `ambiguous`. Row order is preserved.
pub fn majority_filter(data: &CompasRows, ambiguous: AmbiguousGroups) -> CompasRows {
    let key = |r: &[f64]| r.iter().map(|v| v.to_bits()).collect::<Vec<u64>>();
    let mut counts: HashMap<Vec<u64>, HashMap<usize, usize>> = HashMap::new();
    for (r, &y) in data.rows.iter().zip(&data.labels) {
        *counts.entry(key(r)).or_default().entry(y).or_default() += 1;
    }
    let mut out = CompasRows { rows: Vec::new(), labels: Vec::new() };
    for (r, &y) in data.rows.iter().zip(&data.labels) {
        let group = &counts[&key(r)];
        let total: usize = group.values().sum();
        let (&major, &count) = group.iter().max_by_key(|&(label, c)| (*c, std::cmp::Reverse(*label))).expect("non-empty group");
        let keep = if count as f64 >= 0.8 * total as f64 { y == major } else { ambiguous == AmbiguousGroups::Keep };
        if keep {
            out.rows.push(r.clone());
            out.labels.push(y);
        }
    }
    out
}

/// Filtered, encoded COMPAS data split and standardized like the UCI sets.
pub fn preprocess_compas(path: &Path, ambiguous: AmbiguousGroups, seed: u64) -> Result<DatasetSplit> {
    let filtered = majority_filter(&compas_features(path)?, ambiguous);
    split_standardize(
        filtered.rows,
        filtered.labels,
        COMPAS_FEATURES.iter().map(|s| s.to_string()).collect(),
        vec!["Low".into(), "Medium-High".into()],
        seed,
    )
}
