//! Confusion matrices, per-class metrics and report rendering.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("label vectors differ in length: {0} true vs {1} predicted")]
    LengthMismatch(usize, usize),
    #[error("label {label} at row {row} is outside 0..{k}")]
    OutOfRange { row: usize, label: usize, k: usize },
    #[error("class name count {names} does not match K = {k}")]
    ClassNames { names: usize, k: usize },
    #[error("confusion matrix is empty")]
    Empty,
}

/// Pretty name for a lowercase class label (`ip-scan` → `IP-Scan`).
pub fn display_class_name(name: &str) -> String {
    match name {
        "normal" => "Normal".into(),
        "attack" => "Attack".into(),
        "ddos" => "DDoS".into(),
        "ip-scan" => "IP-Scan".into(),
        "port-scan" => "Port-Scan".into(),
        "mitm" => "MitM".into(),
        "replay" => "Replay".into(),
        other => {
            let mut c = other.chars();
            match c.next() {
                Some(f) => f.to_uppercase().chain(c).collect(),
                None => String::new(),
            }
        }
    }
}

/// `counts[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub class_names: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(class_names: Vec<String>) -> Self {
        let k = class_names.len();
        ConfusionMatrix {
            class_names,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn k(&self) -> usize {
        self.class_names.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k()).map(|i| self.counts[i][i]).sum()
    }

    /// Number of rows whose true class is `c`.
    pub fn support(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn predicted(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }
}

/// Count `(true, predicted)` pairs into a K×K matrix.
pub fn confusion_matrix(
    truth: &[usize],
    predicted: &[usize],
    class_names: &[String],
) -> Result<ConfusionMatrix, EvalError> {
    if truth.len() != predicted.len() {
        return Err(EvalError::LengthMismatch(truth.len(), predicted.len()));
    }
    let k = class_names.len();
    let mut cm = ConfusionMatrix::new(class_names.to_vec());
    for (row, (&t, &p)) in truth.iter().zip(predicted).enumerate() {
        for label in [t, p] {
            if label >= k {
                return Err(EvalError::OutOfRange { row, label, k });
            }
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub support: u64,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    /// One-vs-rest accuracy.
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub total: u64,
    pub accuracy: f64,
    pub classes: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    pub fn class(&self, name: &str) -> Option<&ClassMetrics> {
        self.classes.iter().find(|c| c.name == name)
    }
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport, EvalError> {
    let k = cm.k();
    if cm.counts.len() != k || cm.counts.iter().any(|r| r.len() != k) {
        return Err(EvalError::ClassNames { names: k, k: cm.counts.len() });
    }
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::Empty);
    }
    let mut classes = Vec::with_capacity(k);
    for c in 0..k {
        let tp = cm.counts[c][c];
        let fn_ = cm.support(c) - tp;
        let fp = cm.predicted(c) - tp;
        let tn = total - tp - fn_ - fp;
        let (precision, precision_undefined) = ratio(tp, tp + fp);
        let (recall, recall_undefined) = ratio(tp, tp + fn_);
        let f1_undefined = precision + recall == 0.0;
        let f1 = if f1_undefined {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        classes.push(ClassMetrics {
            name: cm.class_names[c].clone(),
            support: tp + fn_,
            tp,
            fp,
            fn_,
            tn,
            accuracy: (tp + tn) as f64 / total as f64,
            precision,
            recall,
            f1,
            precision_undefined,
            recall_undefined,
            f1_undefined,
        });
    }
    let mean = |f: fn(&ClassMetrics) -> f64| classes.iter().map(f).sum::<f64>() / k as f64;
    Ok(MetricsReport {
        model: String::new(),
        total,
        accuracy: cm.trace() as f64 / total as f64,
        macro_precision: mean(|c| c.precision),
        macro_recall: mean(|c| c.recall),
        macro_f1: mean(|c| c.f1),
        classes,
        confusion: cm.clone(),
    })
}

/// Text tables in the layout: model, class, accuracy %, precision %,
/// recall %, F1. Accuracy is printed once per model.
pub fn render_report(reports: &[MetricsReport]) -> String {
    let mut out = String::new();
    let mut footnote = false;
    for r in reports {
        let title = if r.model.is_empty() { "model" } else { &r.model };
        let _ = writeln!(out, "== {title} ({} rows) ==", r.total);
        let _ = writeln!(
            out,
            "{:<12} {:>10} {:>10} {:>10} {:>10} {:>10}",
            "Class", "Support", "Accuracy", "Precision", "Recall", "F1-Score"
        );
        for (i, c) in r.classes.iter().enumerate() {
            let acc = if i == 0 {
                format!("{:.1}", 100.0 * r.accuracy)
            } else {
                String::new()
            };
            let name = display_class_name(&c.name);
            if c.support == 0 {
                footnote = true;
                let _ = writeln!(
                    out,
                    "{:<12} {:>10} {:>10} {:>10} {:>10} {:>10}",
                    format!("{name}*"),
                    0,
                    acc,
                    "-",
                    "-",
                    "-"
                );
            } else {
                let _ = writeln!(
                    out,
                    "{:<12} {:>10} {:>10} {:>10.1} {:>10.1} {:>10.4}",
                    name,
                    c.support,
                    acc,
                    100.0 * c.precision,
                    100.0 * c.recall,
                    c.f1
                );
            }
        }
        let _ = writeln!(
            out,
            "{:<12} {:>10} {:>10} {:>10.1} {:>10.1} {:>10.4}",
            "Macro avg",
            r.total,
            "",
            100.0 * r.macro_precision,
            100.0 * r.macro_recall,
            r.macro_f1
        );
        let _ = writeln!(out, "Overall accuracy: {:.1}%", 100.0 * r.accuracy);
        let _ = writeln!(out);
        out.push_str(&render_confusion(&r.confusion));
        let _ = writeln!(out);
    }
    if footnote {
        let _ = writeln!(out, "* no true instances of this class in the evaluated rows");
    }
    out
}

pub fn render_confusion(cm: &ConfusionMatrix) -> String {
    let names: Vec<String> = cm.class_names.iter().map(|n| display_class_name(n)).collect();
    let width = names.iter().map(|n| n.len()).max().unwrap_or(0).max(8) + 1;
    let mut out = String::new();
    let _ = write!(out, "{:<width$}", "true\\pred");
    for n in &names {
        let _ = write!(out, "{n:>width$}");
    }
    out.push('\n');
    for (n, row) in names.iter().zip(&cm.counts) {
        let _ = write!(out, "{n:<width$}");
        for v in row {
            let _ = write!(out, "{v:>width$}");
        }
        out.push('\n');
    }
    out
}

/// JSON document of the reports, one object per model.
pub fn reports_to_json(reports: &[MetricsReport]) -> String {
    serde_json::to_string_pretty(reports).expect("reports serialize")
}
