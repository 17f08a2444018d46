//! Decision trees, random forests and multilayer perceptrons, plus the
//! artifact format and a small validation-set hyper-parameter search.

pub mod forest;
pub mod mlp;
pub mod tree;

use std::fmt;
use std::io;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dataset::{NormalizationParams, Scheme, Task};
use crate::eval::{compute_metrics, confusion_matrix};

pub use forest::{rf_fit, ForestModel, ForestParams};
pub use mlp::{mlp_fit, Activation, MlpModel, MlpParams};
pub use tree::{dt_fit, Criterion, Node, TreeModel, TreeParams};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("training data is empty")]
    Empty,
    #[error("{rows} rows but {labels} labels")]
    LabelCount { rows: usize, labels: usize },
    #[error("label {label} at row {row} is outside 0..{k}")]
    LabelRange { row: usize, label: usize, k: usize },
    #[error("model expects {expected} features, input has {found}")]
    Width { expected: usize, found: usize },
    #[error("{0}")]
    BadParam(String),
    #[error("training diverged at epoch {epoch} (loss {loss}); lower the learning rate (currently {lr})")]
    Diverged { epoch: usize, loss: f64, lr: f64 },
    #[error("I/O error")]
    Io(#[from] io::Error),
    #[error("invalid model file: {0}")]
    Format(String),
}

pub(crate) fn check_training(x: ArrayView2<f64>, y: &[usize], k: usize) -> Result<(), ModelError> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(ModelError::Empty);
    }
    if x.nrows() != y.len() {
        return Err(ModelError::LabelCount {
            rows: x.nrows(),
            labels: y.len(),
        });
    }
    if let Some((row, &label)) = y.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(ModelError::LabelRange { row, label, k });
    }
    Ok(())
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Dt,
    Rf,
    Ann,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Dt, ModelKind::Rf, ModelKind::Ann];

    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Dt => "DT",
            ModelKind::Rf => "RF",
            ModelKind::Ann => "ANN",
        }
    }
}

impl FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dt" | "tree" => Ok(ModelKind::Dt),
            "rf" | "forest" => Ok(ModelKind::Rf),
            "ann" | "mlp" | "nn" => Ok(ModelKind::Ann),
            _ => Err(format!("unknown model `{s}` (expected dt, rf or ann)")),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Model {
    Tree(TreeModel),
    Forest(ForestModel),
    Mlp(MlpModel),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Tree(_) => ModelKind::Dt,
            Model::Forest(_) => ModelKind::Rf,
            Model::Mlp(_) => ModelKind::Ann,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            Model::Tree(m) => m.n_features,
            Model::Forest(m) => m.n_features,
            Model::Mlp(m) => m.n_features,
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            Model::Tree(m) => m.n_classes,
            Model::Forest(m) => m.n_classes,
            Model::Mlp(m) => m.n_classes,
        }
    }

    /// Per-class probabilities, one row per input row.
    pub fn predict_proba(&self, rows: ArrayView2<f64>) -> Result<Array2<f64>, ModelError> {
        if rows.ncols() != self.n_features() {
            return Err(ModelError::Width {
                expected: self.n_features(),
                found: rows.ncols(),
            });
        }
        let k = self.n_classes();
        Ok(match self {
            Model::Mlp(m) => m.forward(rows),
            Model::Tree(t) => {
                let mut out = Array2::zeros((rows.nrows(), k));
                for (mut o, r) in out.rows_mut().into_iter().zip(rows.rows()) {
                    o.assign(&ndarray::ArrayView1::from(t.leaf_probs(r)));
                }
                out
            }
            Model::Forest(f) => {
                let mut out = Array2::zeros((rows.nrows(), k));
                for (mut o, r) in out.rows_mut().into_iter().zip(rows.rows()) {
                    o.assign(&ndarray::Array1::from(f.predict_proba_row(r)));
                }
                out
            }
        })
    }

    pub fn predict(&self, rows: ArrayView2<f64>) -> Result<Vec<usize>, ModelError> {
        let p = self.predict_proba(rows)?;
        Ok(p.rows().into_iter().map(|r| argmax(r.as_slice().expect("owned rows are contiguous"))).collect())
    }

    pub fn describe(&self) -> String {
        match self {
            Model::Tree(t) => format!("DT criterion={} max_splits={} splits={}", t.criterion, t.max_splits, t.n_splits()),
            Model::Forest(f) => format!(
                "RF learners={} max_splits={} predictors={} bootstrap={}",
                f.params.n_learners, f.params.max_splits, f.params.predictors_to_sample, f.params.bootstrap
            ),
            Model::Mlp(m) => format!(
                "ANN layers={:?} activation={} epochs={} lr={}",
                m.params.hidden, m.params.activation, m.params.epochs, m.params.learning_rate
            ),
        }
    }
}

/// Hyper-parameters for any of the three model families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Tree(TreeParams),
    Forest(ForestParams),
    Mlp(MlpParams),
}

impl ModelSpec {
    pub fn fit(&self, x: ArrayView2<f64>, y: &[usize], n_classes: usize) -> Result<Model, ModelError> {
        Ok(match self {
            ModelSpec::Tree(p) => Model::Tree(dt_fit(x, y, n_classes, p)?),
            ModelSpec::Forest(p) => Model::Forest(rf_fit(x, y, n_classes, p)?),
            ModelSpec::Mlp(p) => Model::Mlp(mlp_fit(x, y, n_classes, p)?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::Tree(_) => ModelKind::Dt,
            ModelSpec::Forest(_) => ModelKind::Rf,
            ModelSpec::Mlp(_) => ModelKind::Ann,
        }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelSpec::Tree(p) => write!(f, "DT criterion={} max_splits={}", p.criterion, p.max_splits),
            ModelSpec::Forest(p) => write!(
                f,
                "RF learners={} max_splits={} predictors={}",
                p.n_learners, p.max_splits, p.predictors_to_sample
            ),
            ModelSpec::Mlp(p) => write!(
                f,
                "ANN layers={:?} activation={} epochs={} lr={}",
                p.hidden, p.activation, p.epochs, p.learning_rate
            ),
        }
    }
}

/// Best configurations reported for the published dataset, with forest
/// predictor counts clipped to the available features.
pub fn reference_spec(kind: ModelKind, task: Task, n_features: usize, seed: u64) -> ModelSpec {
    let clip = |m: usize| m.clamp(1, n_features.max(1));
    match (kind, task) {
        (ModelKind::Dt, Task::Detect) => ModelSpec::Tree(TreeParams {
            criterion: Criterion::Deviance,
            max_splits: 314,
        }),
        (ModelKind::Dt, Task::Identify) => ModelSpec::Tree(TreeParams {
            criterion: Criterion::Twoing,
            max_splits: 1000,
        }),
        (ModelKind::Rf, Task::Detect) => ModelSpec::Forest(ForestParams::new(10, 850, clip(17), seed)),
        (ModelKind::Rf, Task::Identify) => ModelSpec::Forest(ForestParams::new(54, 1680, clip(8), seed)),
        (ModelKind::Ann, Task::Detect) => ModelSpec::Mlp(MlpParams::new(vec![79], Activation::Sigmoid, seed)),
        (ModelKind::Ann, Task::Identify) => ModelSpec::Mlp(MlpParams::new(vec![257], Activation::Sigmoid, seed)),
    }
}

/// Small grid around the reference configuration.
pub fn search_grid(kind: ModelKind, task: Task, n_features: usize, seed: u64) -> Vec<ModelSpec> {
    let reference = reference_spec(kind, task, n_features, seed);
    let mut grid = vec![reference.clone()];
    let mut push = |s: ModelSpec| {
        if !grid.contains(&s) {
            grid.push(s);
        }
    };
    match reference {
        ModelSpec::Tree(p) => {
            for criterion in [Criterion::Gini, Criterion::Twoing, Criterion::Deviance] {
                for max_splits in [p.max_splits / 3, p.max_splits, p.max_splits * 3] {
                    push(ModelSpec::Tree(TreeParams { criterion, max_splits }));
                }
            }
        }
        ModelSpec::Forest(p) => {
            let root = ((n_features as f64).sqrt().round() as usize).clamp(1, n_features.max(1));
            for predictors in [root, p.predictors_to_sample] {
                for n_learners in [p.n_learners, p.n_learners * 3] {
                    push(ModelSpec::Forest(ForestParams {
                        n_learners,
                        predictors_to_sample: predictors,
                        ..p
                    }));
                }
            }
        }
        ModelSpec::Mlp(p) => {
            for activation in [Activation::Sigmoid, Activation::Relu, Activation::Tanh] {
                push(ModelSpec::Mlp(MlpParams {
                    activation,
                    ..p.clone()
                }));
            }
            push(ModelSpec::Mlp(MlpParams {
                hidden: vec![p.hidden[0], p.hidden[0] / 2],
                ..p.clone()
            }));
        }
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchEntry {
    pub spec: ModelSpec,
    pub val_accuracy: f64,
    pub val_macro_f1: f64,
}

/// Fit every candidate on the training rows and keep the one with the best
/// validation accuracy (earlier candidates win ties).
pub fn search(
    grid: &[ModelSpec],
    train: (ArrayView2<f64>, &[usize]),
    val: (ArrayView2<f64>, &[usize]),
    class_names: &[String],
) -> Result<(Model, Vec<SearchEntry>), ModelError> {
    let mut best: Option<(f64, Model)> = None;
    let mut entries = Vec::new();
    for spec in grid {
        let model = spec.fit(train.0, train.1, class_names.len())?;
        let (acc, f1) = if val.1.is_empty() {
            (0.0, 0.0)
        } else {
            let pred = model.predict(val.0)?;
            let cm = confusion_matrix(val.1, &pred, class_names).map_err(|e| ModelError::BadParam(e.to_string()))?;
            let m = compute_metrics(&cm).map_err(|e| ModelError::BadParam(e.to_string()))?;
            (m.accuracy, m.macro_f1)
        };
        log::info!("{spec}: validation accuracy {:.4}, macro F1 {:.4}", acc, f1);
        entries.push(SearchEntry {
            spec: spec.clone(),
            val_accuracy: acc,
            val_macro_f1: f1,
        });
        if best.as_ref().is_none_or(|(b, _)| acc > *b) {
            best = Some((acc, model));
        }
    }
    let (_, model) = best.ok_or_else(|| ModelError::BadParam("empty search grid".into()))?;
    Ok((model, entries))
}

pub const ARTIFACT_FORMAT_VERSION: u32 = 1;

/// Everything needed to reload a model and predict bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    pub task: Option<Task>,
    pub scheme: Option<Scheme>,
    pub normalization: Option<NormalizationParams>,
    pub model: Model,
}

impl ModelArtifact {
    pub fn new(model: Model, feature_names: Vec<String>, class_names: Vec<String>) -> Self {
        ModelArtifact {
            format_version: ARTIFACT_FORMAT_VERSION,
            feature_names,
            class_names,
            task: None,
            scheme: None,
            normalization: None,
            model,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("artifact serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let a: ModelArtifact = serde_json::from_str(text).map_err(|e| ModelError::Format(e.to_string()))?;
        if a.format_version != ARTIFACT_FORMAT_VERSION {
            return Err(ModelError::Format(format!("unsupported format version {}", a.format_version)));
        }
        if a.feature_names.len() != a.model.n_features() || a.class_names.len() != a.model.n_classes() {
            return Err(ModelError::Format("feature or class names do not match the model".into()));
        }
        Ok(a)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
