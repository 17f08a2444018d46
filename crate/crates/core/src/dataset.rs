//! From a labeled flow CSV to model-ready matrices.
//!
//! Cleaning replaces empty cells with 0, drops the address and absolute/relative
//! time columns, ordinal-encodes `protocol` and keeps the remaining 44 feature
//! columns in schema order. Splits are seeded random permutations cut into
//! train/validation/test; min-max parameters come from training rows only.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::fs::File;
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::flow::{canonical_column, FlowProtocol, FLOW_COLUMNS};
use crate::label::NORMAL;

/// Columns removed before modelling: addresses and time stamps.
pub const DROPPED_COLUMNS: [&str; 6] = ["sAddress", "rAddress", "start", "end", "startOffset", "endOffset"];

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.5, 0.2, 0.3];

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot open {path}")]
    Open { path: PathBuf, source: io::Error },
    #[error("I/O error")]
    Io(#[from] io::Error),
    #[error("CSV error")]
    Csv(#[from] csv::Error),
    #[error("unknown column(s): {0}")]
    UnknownColumns(String),
    #[error("missing column(s): {0}")]
    MissingColumns(String),
    #[error("label column {0} is empty")]
    EmptyLabels(&'static str),
    #[error("row {row}, column {column}: {reason}")]
    Cell { row: usize, column: String, reason: String },
    #[error("split fractions must be non-negative and sum to 1, got {0:?}")]
    BadFractions([f64; 3]),
    #[error("need at least 3 rows to split, got {0}")]
    TooFewRows(usize),
    #[error("dataset has not been split yet")]
    NotSplit,
    #[error("requested {k} components from {p} columns")]
    TooManyComponents { k: usize, p: usize },
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("invalid metadata: {0}")]
    Meta(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "IT")]
    It,
    #[serde(rename = "NST")]
    Nst,
}

impl FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "IT" => Ok(Scheme::It),
            "NST" => Ok(Scheme::Nst),
            _ => Err(format!("unknown labeling scheme `{s}` (expected IT or NST)")),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::It => "IT",
            Scheme::Nst => "NST",
        })
    }
}

/// `Detect` is binary normal/attack; `Identify` is one class per attack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Detect,
    Identify,
}

impl FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "detect" | "binary" => Ok(Task::Detect),
            "identify" | "multiclass" | "multi-class" => Ok(Task::Identify),
            _ => Err(format!("unknown task `{s}` (expected detect or identify)")),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Detect => "detect",
            Task::Identify => "identify",
        })
    }
}

/// Name of the label column a (scheme, task) pair trains on.
pub fn label_column(scheme: Scheme, task: Task) -> &'static str {
    match (scheme, task) {
        (Scheme::It, Task::Detect) => "IT-B-Label",
        (Scheme::It, Task::Identify) => "IT-M-Label",
        (Scheme::Nst, Task::Detect) => "NST-B-Label",
        (Scheme::Nst, Task::Identify) => "NST-M-Label",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }
}

impl FromStr for SplitTag {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(SplitTag::Train),
            "val" | "validation" => Ok(SplitTag::Val),
            "test" => Ok(SplitTag::Test),
            _ => Err(format!("unknown split `{s}` (expected train, val or test)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitMode {
    #[default]
    Random,
    /// Keep file order: earliest rows train, latest rows test.
    Chronological,
}

#[derive(Debug, Clone, Default)]
pub struct CleanOptions {
    /// Drop columns outside the flow schema instead of failing.
    pub allow_extra_columns: bool,
}

/// Numeric feature table with labels and split assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMatrix {
    pub column_names: Vec<String>,
    pub rows: Array2<f64>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub split: Option<Vec<SplitTag>>,
}

impl DatasetMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn column_index(&self, name: &str) -> Result<usize, DatasetError> {
        self.column_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| DatasetError::UnknownFeature(name.to_string()))
    }

    /// Feature rows and labels of one split.
    pub fn part(&self, tag: SplitTag) -> Result<(Array2<f64>, Vec<usize>), DatasetError> {
        let split = self.split.as_ref().ok_or(DatasetError::NotSplit)?;
        let idx: Vec<usize> = (0..self.n_rows()).filter(|&i| split[i] == tag).collect();
        let x = self.rows.select(Axis(0), &idx);
        let y = idx.iter().map(|&i| self.labels[i]).collect();
        Ok((x, y))
    }

    /// Keep only the named columns, in the order given.
    pub fn with_columns(&self, names: &[String]) -> Result<DatasetMatrix, DatasetError> {
        let idx = names
            .iter()
            .map(|n| self.column_index(n))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(DatasetMatrix {
            column_names: names.to_vec(),
            rows: self.rows.select(Axis(1), &idx),
            labels: self.labels.clone(),
            class_names: self.class_names.clone(),
            split: self.split.clone(),
        })
    }

    pub fn split_sizes(&self) -> Option<[usize; 3]> {
        self.split.as_ref().map(|s| {
            let mut sizes = [0; 3];
            for t in s {
                sizes[*t as usize] += 1;
            }
            sizes
        })
    }
}

/// Column names kept after cleaning, in schema order.
pub fn feature_columns() -> Vec<&'static str> {
    FLOW_COLUMNS[..50]
        .iter()
        .copied()
        .filter(|c| !DROPPED_COLUMNS.contains(c))
        .collect()
}

fn protocol_code(known: &mut Vec<String>, s: &str) -> f64 {
    if let Ok(p) = s.parse::<FlowProtocol>() {
        return FlowProtocol::ALL.iter().position(|x| *x == p).unwrap_or(0) as f64;
    }
    let s = s.to_ascii_uppercase();
    let pos = match known.iter().position(|k| *k == s) {
        Some(p) => p,
        None => {
            known.push(s);
            known.len() - 1
        }
    };
    (FlowProtocol::ALL.len() + pos) as f64
}

/// Resolve headers to schema positions. Returns `(schema index per csv
/// column, csv column per schema index)`.
fn resolve_headers(
    headers: &csv::StringRecord,
    allow_extra: bool,
) -> Result<(Vec<Option<usize>>, HashMap<&'static str, usize>), DatasetError> {
    let mut per_csv = Vec::with_capacity(headers.len());
    let mut by_name = HashMap::new();
    let mut unknown = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        match canonical_column(h) {
            Some(c) => {
                by_name.insert(c, i);
                per_csv.push(FLOW_COLUMNS.iter().position(|x| *x == c));
            }
            None => {
                unknown.push(h.to_string());
                per_csv.push(None);
            }
        }
    }
    if !unknown.is_empty() {
        if allow_extra {
            log::warn!("ignoring non-schema columns: {}", unknown.join(", "));
        } else {
            return Err(DatasetError::UnknownColumns(unknown.join(", ")));
        }
    }
    Ok((per_csv, by_name))
}

fn label_class(raw: &str, task: Task) -> Option<String> {
    let raw = raw.trim();
    if raw.is_empty() {
        return None;
    }
    Some(match task {
        Task::Detect => match raw {
            "0" | "0.0" => NORMAL.to_string(),
            "1" | "1.0" => "attack".to_string(),
            other => other.to_ascii_lowercase(),
        },
        Task::Identify => raw.to_ascii_lowercase(),
    })
}

/// Parse a labeled flow CSV into a cleaned matrix.
pub fn clean_dataset<R: Read>(
    reader: R,
    task: Task,
    scheme: Scheme,
    options: &CleanOptions,
) -> Result<DatasetMatrix, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let (_, by_name) = resolve_headers(&headers, options.allow_extra_columns)?;
    let features = feature_columns();
    let label_name = label_column(scheme, task);
    let mut needed: Vec<&str> = features.clone();
    needed.push(label_name);
    let missing: Vec<&str> = needed.iter().copied().filter(|c| !by_name.contains_key(c)).collect();
    if !missing.is_empty() {
        return Err(DatasetError::MissingColumns(missing.join(", ")));
    }
    let feature_idx: Vec<usize> = features.iter().map(|c| by_name[c]).collect();
    let label_idx = by_name[label_name];

    let mut data = Vec::new();
    let mut raw_labels = Vec::new();
    let mut unlabeled_rows = Vec::new();
    let mut extra_protocols = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        for (&col, &name) in feature_idx.iter().zip(&features) {
            let cell = rec.get(col).unwrap_or("").trim();
            let v = if name == "protocol" {
                protocol_code(&mut extra_protocols, cell)
            } else if cell.is_empty() {
                0.0
            } else {
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => v,
                    _ => {
                        return Err(DatasetError::Cell {
                            row,
                            column: name.to_string(),
                            reason: format!("`{cell}` is not a finite number"),
                        })
                    }
                }
            };
            data.push(v);
        }
        match label_class(rec.get(label_idx).unwrap_or(""), task) {
            Some(l) => raw_labels.push(l),
            None => {
                unlabeled_rows.push(row);
                raw_labels.push(String::new());
            }
        }
    }
    let n = raw_labels.len();
    if n > 0 && unlabeled_rows.len() == n {
        return Err(DatasetError::EmptyLabels(label_name));
    }
    if let Some(&row) = unlabeled_rows.first() {
        return Err(DatasetError::Cell {
            row,
            column: label_name.to_string(),
            reason: format!("missing label ({} unlabeled rows)", unlabeled_rows.len()),
        });
    }

    // normal is always class 0; attack classes follow alphabetically.
    let mut class_names = vec![NORMAL.to_string()];
    let mut others: Vec<String> = raw_labels.iter().filter(|l| *l != NORMAL).cloned().collect();
    others.sort();
    others.dedup();
    if task == Task::Detect && others.is_empty() {
        others.push("attack".to_string());
    }
    class_names.extend(others);
    let lookup: HashMap<&str, usize> = class_names.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let labels = raw_labels.iter().map(|l| lookup[l.as_str()]).collect();

    let rows = Array2::from_shape_vec((n, features.len()), data).expect("row width is fixed");
    Ok(DatasetMatrix {
        column_names: features.iter().map(|s| s.to_string()).collect(),
        rows,
        labels,
        class_names,
        split: None,
    })
}

pub fn clean_dataset_file(
    path: impl AsRef<Path>,
    task: Task,
    scheme: Scheme,
    options: &CleanOptions,
) -> Result<DatasetMatrix, DatasetError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DatasetError::Open {
        path: path.to_path_buf(),
        source,
    })?;
    clean_dataset(io::BufReader::new(file), task, scheme, options)
}

/// Row counts per split under largest-remainder rounding. Ties in the
/// remainder go to the earlier split.
pub fn split_sizes(n: usize, fractions: [f64; 3]) -> Result<[usize; 3], DatasetError> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(DatasetError::BadFractions(fractions));
    }
    let exact = fractions.map(|f| f * n as f64);
    let mut sizes = exact.map(|e| e.floor() as usize);
    let mut left = n - sizes.iter().sum::<usize>().min(n);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    Ok(sizes)
}

/// Assign every row to train/validation/test.
pub fn split_dataset(
    matrix: &mut DatasetMatrix,
    fractions: [f64; 3],
    seed: u64,
    mode: SplitMode,
) -> Result<(), DatasetError> {
    let n = matrix.n_rows();
    if n < 3 {
        return Err(DatasetError::TooFewRows(n));
    }
    let sizes = split_sizes(n, fractions)?;
    let mut order: Vec<usize> = (0..n).collect();
    if mode == SplitMode::Random {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let mut tags = vec![SplitTag::Train; n];
    for (pos, &row) in order.iter().enumerate() {
        tags[row] = if pos < sizes[0] {
            SplitTag::Train
        } else if pos < sizes[0] + sizes[1] {
            SplitTag::Val
        } else {
            SplitTag::Test
        };
    }
    matrix.split = Some(tags);
    Ok(())
}

/// Per-column minimum and maximum of the training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub columns: Vec<String>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormalizationParams {
    pub fn fit(columns: &[String], rows: ArrayView2<f64>) -> Self {
        let p = rows.ncols();
        let mut min = vec![0.0; p];
        let mut max = vec![0.0; p];
        if rows.nrows() > 0 {
            for (j, col) in rows.columns().into_iter().enumerate() {
                min[j] = col.iter().copied().fold(f64::INFINITY, f64::min);
                max[j] = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            }
        }
        NormalizationParams {
            columns: columns.to_vec(),
            min,
            max,
        }
    }

    /// `(v - min) / (max - min)`, or 0 for constant columns. Values outside
    /// the training range are not clamped.
    pub fn scale(&self, column: usize, v: f64) -> f64 {
        let range = self.max[column] - self.min[column];
        if range > 0.0 {
            (v - self.min[column]) / range
        } else {
            0.0
        }
    }

    pub fn apply(&self, rows: &mut Array2<f64>) {
        for mut row in rows.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.scale(j, *v);
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        std::fs::write(path, text)
    }

    pub fn load(path: impl AsRef<Path>) -> io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(io::Error::other)
    }
}

/// Fit min-max parameters on the training split and rescale every row.
pub fn minmax_normalize(matrix: &mut DatasetMatrix) -> Result<NormalizationParams, DatasetError> {
    let split = matrix.split.as_ref().ok_or(DatasetError::NotSplit)?;
    let train: Vec<usize> = (0..matrix.n_rows()).filter(|&i| split[i] == SplitTag::Train).collect();
    let params = NormalizationParams::fit(&matrix.column_names, matrix.rows.select(Axis(0), &train).view());
    params.apply(&mut matrix.rows);
    Ok(params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub name: String,
    pub count: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

/// Flow counts per label and protocol, plus per-feature ranges.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total: usize,
    pub it_classes: BTreeMap<String, usize>,
    pub nst_classes: BTreeMap<String, usize>,
    pub it_binary: BTreeMap<String, usize>,
    pub nst_binary: BTreeMap<String, usize>,
    pub protocols: BTreeMap<String, usize>,
    pub features: Vec<FeatureSummary>,
}

pub const UNLABELED: &str = "(unlabeled)";

impl DatasetStats {
    pub fn it_count(&self, class: &str) -> usize {
        self.it_classes.get(class).copied().unwrap_or(0)
    }

    pub fn nst_count(&self, class: &str) -> usize {
        self.nst_classes.get(class).copied().unwrap_or(0)
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let mut classes: Vec<&String> = self.it_classes.keys().chain(self.nst_classes.keys()).collect();
        classes.sort_by_key(|c| (c.as_str() != NORMAL, c.to_string()));
        classes.dedup();
        let _ = writeln!(out, "{:<16} {:>12} {:>12}", "Attack type", "# IT flows", "# NST flows");
        for c in classes {
            let _ = writeln!(
                out,
                "{:<16} {:>12} {:>12}",
                crate::eval::display_class_name(c),
                self.it_count(c),
                self.nst_count(c)
            );
        }
        let _ = writeln!(out, "{:<16} {:>12} {:>12}", "Total", self.total, self.total);
        let _ = writeln!(out);
        let _ = writeln!(out, "Protocols:");
        for (p, n) in &self.protocols {
            let _ = writeln!(out, "  {p:<12} {n:>10}");
        }
        if !self.features.is_empty() {
            let _ = writeln!(out);
            let _ = writeln!(out, "{:<16} {:>14} {:>14} {:>14}", "Feature", "min", "max", "mean");
            for f in &self.features {
                let _ = writeln!(out, "{:<16} {:>14.6} {:>14.6} {:>14.6}", f.name, f.min, f.max, f.mean);
            }
        }
        out
    }
}

/// Summarize a (labeled) flow CSV. Columns outside the schema are ignored.
pub fn dataset_stats<R: Read>(reader: R) -> Result<DatasetStats, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = match rdr.headers() {
        Ok(h) => h.clone(),
        Err(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => return Err(e.into()),
        Err(e) => return Err(e.into()),
    };
    let mut stats = DatasetStats::default();
    if headers.is_empty() {
        return Ok(stats);
    }
    let (_, by_name) = resolve_headers(&headers, true)?;
    let numeric: Vec<(&str, usize)> = FLOW_COLUMNS[3..50]
        .iter()
        .filter_map(|c| by_name.get(c).map(|&i| (*c, i)))
        .collect();
    let mut sums = vec![(0usize, f64::INFINITY, f64::NEG_INFINITY, 0.0f64); numeric.len()];
    let col = |name: &str| by_name.get(name).copied();
    let (it_m, nst_m, it_b, nst_b, proto) = (
        col("IT-M-Label"),
        col("NST-M-Label"),
        col("IT-B-Label"),
        col("NST-B-Label"),
        col("protocol"),
    );
    let bump = |map: &mut BTreeMap<String, usize>, rec: &csv::StringRecord, idx: Option<usize>| {
        if let Some(i) = idx {
            let v = rec.get(i).unwrap_or("").trim();
            let key = if v.is_empty() { UNLABELED.to_string() } else { v.to_ascii_lowercase() };
            *map.entry(key).or_default() += 1;
        }
    };
    for rec in rdr.records() {
        let rec = rec?;
        stats.total += 1;
        bump(&mut stats.it_classes, &rec, it_m);
        bump(&mut stats.nst_classes, &rec, nst_m);
        bump(&mut stats.it_binary, &rec, it_b);
        bump(&mut stats.nst_binary, &rec, nst_b);
        if let Some(p) = proto {
            *stats
                .protocols
                .entry(rec.get(p).unwrap_or("").trim().to_ascii_uppercase())
                .or_default() += 1;
        }
        for ((_, i), acc) in numeric.iter().zip(sums.iter_mut()) {
            if let Some(v) = rec.get(*i).and_then(|c| c.trim().parse::<f64>().ok()).filter(|v| v.is_finite()) {
                acc.0 += 1;
                acc.1 = acc.1.min(v);
                acc.2 = acc.2.max(v);
                acc.3 += v;
            }
        }
    }
    stats.features = numeric
        .iter()
        .zip(sums)
        .filter(|(_, acc)| acc.0 > 0)
        .map(|((name, _), (count, min, max, sum))| FeatureSummary {
            name: name.to_string(),
            count,
            min,
            max,
            mean: sum / count as f64,
        })
        .collect();
    Ok(stats)
}

pub fn dataset_stats_file(path: impl AsRef<Path>) -> Result<DatasetStats, DatasetError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DatasetError::Open {
        path: path.to_path_buf(),
        source,
    })?;
    dataset_stats(io::BufReader::new(file))
}

/// Principal-component projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `k × p`, one unit-length component per row.
    pub components: Array2<f64>,
    /// Eigenvalues of the sample covariance, descending.
    pub explained_variance: Vec<f64>,
    /// Trace of the sample covariance.
    pub total_variance: f64,
    /// `n × k` projected coordinates.
    pub coords: Array2<f64>,
}

impl Pca {
    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        self.explained_variance
            .iter()
            .map(|v| if self.total_variance > 0.0 { v / self.total_variance } else { 0.0 })
            .collect()
    }
}

/// Project rows onto the top-`k` eigenvectors of their covariance. Each
/// component's sign is chosen so its largest-magnitude loading is positive.
pub fn pca_project(rows: ArrayView2<f64>, k: usize) -> Result<Pca, DatasetError> {
    let (n, p) = rows.dim();
    if k > p {
        return Err(DatasetError::TooManyComponents { k, p });
    }
    let mean: Vec<f64> = if n > 0 {
        rows.mean_axis(Axis(0)).expect("non-empty").to_vec()
    } else {
        vec![0.0; p]
    };
    let mut centered = rows.to_owned();
    for mut r in centered.rows_mut() {
        for (v, m) in r.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let cov = centered.t().dot(&centered) / denom;
    let sym = DMatrix::from_fn(p, p, |i, j| 0.5 * (cov[[i, j]] + cov[[j, i]]));
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut components = Array2::zeros((k, p));
    let mut explained = Vec::with_capacity(k);
    for (c, &idx) in order.iter().take(k).enumerate() {
        let v = eig.eigenvectors.column(idx);
        let pivot = (0..p)
            .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(b.cmp(&a)))
            .unwrap_or(0);
        let sign = if p > 0 && v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..p {
            components[[c, j]] = sign * v[j];
        }
        explained.push(eig.eigenvalues[idx].max(0.0));
    }
    let total_variance = (0..p).map(|i| cov[[i, i]]).sum();
    let coords = centered.dot(&components.t());
    Ok(Pca {
        mean,
        components,
        explained_variance: explained,
        total_variance,
        coords,
    })
}

/// Metadata stored next to a prepared dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedMeta {
    pub format_version: u32,
    pub scheme: Scheme,
    pub task: Task,
    pub seed: u64,
    pub fractions: [f64; 3],
    pub chronological: bool,
    pub class_names: Vec<String>,
    pub normalization: NormalizationParams,
}

pub const PREPARED_FORMAT_VERSION: u32 = 1;

/// Sidecar path for a prepared CSV: `x.csv` → `x.meta.json`.
pub fn meta_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

/// Write `split,label,<features…>` rows. Labels are class names.
pub fn write_prepared<W: io::Write>(writer: W, matrix: &DatasetMatrix) -> Result<(), DatasetError> {
    let split = matrix.split.as_ref().ok_or(DatasetError::NotSplit)?;
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["split".to_string(), "label".to_string()];
    header.extend(matrix.column_names.iter().cloned());
    w.write_record(&header)?;
    for (i, row) in matrix.rows.rows().into_iter().enumerate() {
        let mut cells = vec![split[i].as_str().to_string(), matrix.class_names[matrix.labels[i]].clone()];
        // Shortest round-trip representation keeps reloads bit-identical.
        cells.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&cells)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_prepared<R: Read>(reader: R, class_names: &[String]) -> Result<DatasetMatrix, DatasetError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 || &headers[0] != "split" || &headers[1] != "label" {
        return Err(DatasetError::Meta("prepared file must start with split,label columns".into()));
    }
    let column_names: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
    let lookup: HashMap<&str, usize> = class_names.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut split = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let cell_err = |column: &str, reason: String| DatasetError::Cell {
            row,
            column: column.to_string(),
            reason,
        };
        split.push(rec[0].parse::<SplitTag>().map_err(|e| cell_err("split", e))?);
        labels.push(
            *lookup
                .get(&rec[1])
                .ok_or_else(|| cell_err("label", format!("unknown class `{}`", &rec[1])))?,
        );
        for (j, name) in column_names.iter().enumerate() {
            let s = rec.get(j + 2).unwrap_or("");
            data.push(s.parse::<f64>().map_err(|_| cell_err(name, format!("`{s}` is not a number")))?);
        }
    }
    let n = labels.len();
    Ok(DatasetMatrix {
        rows: Array2::from_shape_vec((n, column_names.len()), data).expect("row width is fixed"),
        column_names,
        labels,
        class_names: class_names.to_vec(),
        split: Some(split),
    })
}

/// Save a prepared dataset as CSV plus a JSON sidecar.
pub fn save_prepared(path: &Path, matrix: &DatasetMatrix, meta: &PreparedMeta) -> Result<(), DatasetError> {
    let file = File::create(path)?;
    write_prepared(io::BufWriter::new(file), matrix)?;
    let text = serde_json::to_string_pretty(meta).map_err(|e| DatasetError::Meta(e.to_string()))?;
    std::fs::write(meta_path(path), text)?;
    Ok(())
}

pub fn load_prepared(path: &Path) -> Result<(DatasetMatrix, PreparedMeta), DatasetError> {
    let mp = meta_path(path);
    let text = std::fs::read_to_string(&mp).map_err(|source| DatasetError::Open { path: mp, source })?;
    let meta: PreparedMeta = serde_json::from_str(&text).map_err(|e| DatasetError::Meta(e.to_string()))?;
    if meta.format_version != PREPARED_FORMAT_VERSION {
        return Err(DatasetError::Meta(format!("unsupported format version {}", meta.format_version)));
    }
    let file = File::open(path).map_err(|source| DatasetError::Open {
        path: path.to_path_buf(),
        source,
    })?;
    let matrix = read_prepared(io::BufReader::new(file), &meta.class_names)?;
    Ok((matrix, meta))
}
